"""Markdown report and plot-ready tables assembled from stored artifacts (no recomputation)."""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np
import pandas as pd

from .store import ArtifactNotFound, ArtifactStore

logger = logging.getLogger(__name__)

FEATURE_SET_LABELS = {
    "none": "Baseline", "controls": "Controls", "all": "MF", "controls_plus_all": "Controls + MF",
    "robust": "Robust MF", "controls_plus_robust": "Controls + Robust MF",
}


def _num(v: float, digits: int = 3) -> str:
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def _pval(v: float) -> str:
    if math.isnan(v):
        return "n/a"
    return "<.001" if v < 0.001 else f"{v:.3f}".lstrip("0")


def _ci(point: float, lo: float, hi: float) -> str:
    return f"{_num(point)} [{_num(lo)}, {_num(hi)}]"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _load(store: ArtifactStore, name: str) -> pd.DataFrame | None:
    try:
        return store.load(name)
    except ArtifactNotFound:
        return None


def funnel_table(drop_log: pd.DataFrame | None, n_extracted: int | None, assoc: pd.DataFrame | None,
                 comparisons: Sequence[str], q_level: float = 0.05) -> pd.DataFrame:
    """Feature counts after each step; screening rows are per comparison plus 'any'."""
    rows = []
    if drop_log is not None and n_extracted is not None:
        left = n_extracted
        rows.append(("extracted", left))
        for reason in ("too_missing", "near_constant", "dedup"):
            left -= int((drop_log["reason"] == reason).sum())
            rows.append((f"after_{reason}", left))
    base = pd.DataFrame(rows, columns=["stage", "count"])
    table = pd.DataFrame({"stage": base["stage"]})
    for c in comparisons:
        table[c] = base["count"]
    table["any"] = base["count"]
    if assoc is not None:
        extra = []
        for stage, mask_fn in (("tested", lambda a: np.ones(len(a), bool)),
                               ("q_bh_below_level", lambda a: a["q_bh"].to_numpy() < q_level),
                               ("retained", lambda a: a["retained"].to_numpy(dtype=bool))):
            row = {"stage": stage}
            union = set()
            for c in comparisons:
                sub = assoc[assoc["comparison_id"] == c]
                hit = set(sub["feature"][mask_fn(sub)])
                row[c] = len(hit)
                union |= hit
            row["any"] = len(union)
            extra.append(row)
        table = pd.concat([table, pd.DataFrame(extra)], ignore_index=True)
    for c in table.columns[1:]:
        table[c] = table[c].astype(np.int64)
    return table


def emit_report(store: ArtifactStore, comparisons: Sequence[str] | None = None) -> str:
    """Render report.md plus plot_mae / plot_sign artifacts from whatever artifacts exist."""
    drop_log = _load(store, "drop_log")
    raw = _load(store, "metafeatures_raw")
    assoc = _load(store, "associations")
    if assoc is None:
        assoc = _load(store, "screening")
    pred = _load(store, "predictive")
    if comparisons is None:
        seen = []
        for df in (assoc, pred):
            if df is not None:
                seen += [c for c in df["comparison_id"] if c not in seen]
        comparisons = seen

    lines = ["# Meta-feature gap analysis report", ""]
    absent = []

    if drop_log is None and assoc is None:
        absent.append("retention funnel (run `metagap preprocess` / `metagap screen`)")
    else:
        n_extracted = raw.shape[1] - 1 if raw is not None else None
        funnel = funnel_table(drop_log, n_extracted, assoc, comparisons)
        store.persist("funnel", funnel)
        lines += ["## Retention funnel", ""]
        lines += _table(list(funnel.columns), [[str(v) for v in r] for r in funnel.itertuples(index=False)]) + [""]

    if assoc is not None:
        lines += ["## Retained robust associations", ""]
        kept = assoc[assoc["retained"].astype(bool)]
        rows = [[r.comparison_id, f"`{r.feature}`", str(r.n), _ci(r.rho, r.ci_low, r.ci_high), _pval(r.q_bh),
                 _num(r.sign_consistency, 2), _ci(r.adj_coef, r.adj_ci_low, r.adj_ci_high),
                 _pval(r.adj_sign_consistency)] for r in kept.itertuples(index=False)]
        lines += _table(["Comparison", "Feature", "n", "rho (95% CI)", "q_BH", "Sign cons.",
                         "Adj. coef. (95% CI)", "Adj. sign cons."], rows)
        if not rows:
            lines += ["", "_No feature passed both the FDR and the sign-consistency criteria._"]
        lines += [""]

        lines += ["## Nominal associations (top 10 with p < 0.05)", ""]
        for c in comparisons:
            sub = assoc[(assoc["comparison_id"] == c) & (assoc["p"] < 0.05)].sort_values(
                ["p", "feature"], kind="mergesort").head(10)
            lines += [f"### {c}", ""]
            rows = [[f"`{r.feature}`", str(r.n), _num(r.rho), _pval(r.p), _pval(r.q_bh)]
                    for r in sub.itertuples(index=False)]
            lines += _table(["Feature", "n", "rho", "p", "q_BH"], rows) + [""]
    else:
        absent.append("associations (run `metagap screen`)")

    if pred is not None:
        lines += ["## Leave-one-dataset-out predictive evaluation", ""]
        for c in comparisons:
            sub = pred[pred["comparison_id"] == c]
            if sub.empty:
                continue
            lines += [f"### {c}", ""]
            rows = []
            for r in sub.itertuples(index=False):
                label = FEATURE_SET_LABELS.get(r.feature_set, r.feature_set)
                if r.predictor != "baseline":
                    label = f"{label} ({r.predictor})"
                rows.append([label, str(r.n), str(r.n_pred), _ci(r.mae, r.mae_lo, r.mae_hi),
                             _ci(r.sign_acc, r.sign_lo, r.sign_hi)])
            lines += _table(["Predictor", "n", "n_pred", "MAE (95% CI)", "Sign accuracy (95% CI)"], rows) + [""]
        keys = ["comparison_id", "predictor", "feature_set", "n_pred"]
        store.persist("plot_mae", pred[keys + ["mae", "mae_lo", "mae_hi"]].copy())
        store.persist("plot_sign", pred[keys + ["sign_acc", "sign_lo", "sign_hi"]].copy())
    else:
        absent.append("predictive evaluation (run `metagap route-eval`)")

    if absent:
        for a in absent:
            logger.warning("report: section absent: %s", a)
        lines += ["---", "", "Absent sections: " + "; ".join(absent) + "."]

    text = "\n".join(lines).rstrip() + "\n"
    store.persist_document("report.md", text)
    return text
