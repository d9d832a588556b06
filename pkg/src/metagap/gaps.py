"""Per-split error normalisation, validation-based family selection and dataset-level gaps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .store import (
    ComparisonSpec, DatasetInfo, FamilySpec, MethodRun, RunStore, StudyDefinition, applicable_datasets,
)

logger = logging.getLogger(__name__)

EPSILON = 1e-5
SPLIT_KEY = ["dataset_id", "repeat", "fold"]


@dataclass(frozen=True)
class SplitAnchors:
    e_min: float
    e_med: float
    r: float
    epsilon: float = EPSILON

    @classmethod
    def from_errors(cls, errors, epsilon: float = EPSILON) -> "SplitAnchors":
        e = np.asarray(errors, dtype=float)
        if e.size == 0:
            raise ValueError("cannot anchor an empty pool")
        e_min = float(e.min())
        e_med = float(np.median(e))  # mean of the two middle values for even sizes
        return cls(e_min, e_med, max(e_med - e_min, epsilon), epsilon)

    def score(self, e):
        return np.clip((np.asarray(e, dtype=float) - self.e_min) / self.r, 0.0, 1.0)


@dataclass(frozen=True)
class NormalizedRun:
    run: MethodRun
    val_norm: float
    test_norm: float


@dataclass
class GapRecord:
    comparison_id: str
    dataset_id: str
    delta: float
    n_splits_used: int
    per_split_gaps: list[float] = field(default_factory=list)


def normalize_split(pool: list[MethodRun], epsilon: float = EPSILON) -> list[NormalizedRun]:
    """Map the raw errors of one (dataset, split) pool onto [0, 1].

    Test and validation errors are anchored separately, each to the pool's own
    minimum and median.
    """
    if not pool:
        raise ValueError("empty pool")
    test = SplitAnchors.from_errors([r.test_error for r in pool], epsilon)
    val = SplitAnchors.from_errors([r.val_error for r in pool], epsilon)
    return [NormalizedRun(r, float(val.score(r.val_error)), float(test.score(r.test_error))) for r in pool]


def select_family_rep(family: FamilySpec, pool: list[NormalizedRun]) -> NormalizedRun | None:
    """Lowest normalised validation error within the family; ties go to (method_id, subtype) order.

    Returns None when no family member was measured on this split.
    """
    members = [n for n in pool if family.admits(n.run.method_id, n.run.subtype)]
    if not members:
        return None
    return min(members, key=lambda n: (n.val_norm, n.run.method_id, n.run.subtype))


def normalize_store(store: RunStore, epsilon: float = EPSILON) -> pd.DataFrame:
    """Vectorised normalize_split over every (dataset, split) pool of the store."""
    df = store.frame
    if df.empty:
        return df.assign(val_norm=pd.Series(dtype=float), test_norm=pd.Series(dtype=float))
    g = df.groupby(SPLIT_KEY, sort=False)
    for raw, out in (("test_error", "test_norm"), ("val_error", "val_norm")):
        e_min = g[raw].transform("min")
        e_med = g[raw].transform("median")
        r = np.maximum(e_med - e_min, epsilon)
        df[out] = np.clip((df[raw] - e_min) / r, 0.0, 1.0)
    return df


def _representatives(norm: pd.DataFrame, family: FamilySpec) -> pd.DataFrame:
    mask = np.array([family.admits(m, s) for m, s in zip(norm["method_id"], norm["subtype"])], dtype=bool)
    sub = norm[mask]
    sub = sub.sort_values(SPLIT_KEY + ["val_norm", "method_id", "subtype"], kind="mergesort")
    return sub.drop_duplicates(SPLIT_KEY, keep="first").set_index(SPLIT_KEY)


def compute_gaps(
    comparison: ComparisonSpec,
    store: RunStore,
    families: dict[str, FamilySpec] | StudyDefinition,
    infos: list[DatasetInfo] | None = None,
    epsilon: float = EPSILON,
    normalized: pd.DataFrame | None = None,
) -> list[GapRecord]:
    """Dataset-level gaps: mean over usable splits of (family A norm. test error - family B's).

    Positive values mean family B does better.  Splits where either family has
    no measured member are skipped; datasets left with no usable split are
    dropped with a log message.
    """
    if isinstance(families, StudyDefinition):
        families = families.families
    fam_a, fam_b = families[comparison.family_a], families[comparison.family_b]
    norm = normalize_store(store, epsilon) if normalized is None else normalized

    datasets = store.dataset_ids
    if comparison.applicability is not None:
        if not infos:
            raise ValueError(f"{comparison.comparison_id}: applicability rule needs dataset descriptors")
        allowed = applicable_datasets(comparison.applicability, infos)
        datasets = [d for d in datasets if d in allowed]
    norm = norm[norm["dataset_id"].isin(datasets)]

    rep_a = _representatives(norm, fam_a)["test_norm"]
    rep_b = _representatives(norm, fam_b)["test_norm"]
    both = pd.concat({"a": rep_a, "b": rep_b}, axis=1, join="inner").sort_index()
    diffs = (both["a"] - both["b"]).rename("gap")

    records = []
    for dataset_id in datasets:
        if dataset_id in diffs.index.get_level_values(0):
            per_split = diffs.xs(dataset_id, level=0).tolist()
        else:
            per_split = []
        if not per_split:
            logger.info("%s: dataset %s has no split where both families were measured; omitted",
                        comparison.comparison_id, dataset_id)
            continue
        records.append(GapRecord(comparison.comparison_id, dataset_id, float(np.mean(per_split)),
                                 len(per_split), [float(x) for x in per_split]))
    if not records:
        logger.warning("%s: no applicable dataset has a usable split", comparison.comparison_id)
    return records


def gaps_to_frame(records: list[GapRecord], per_split: bool = False) -> pd.DataFrame:
    cols = ["comparison_id", "dataset_id", "delta", "n_splits_used"]
    if per_split:
        rows = [(r.comparison_id, r.dataset_id, i, g) for r in records for i, g in enumerate(r.per_split_gaps)]
        return pd.DataFrame(rows, columns=["comparison_id", "dataset_id", "split_index", "gap"]).astype(
            {"split_index": np.int64, "gap": float})
    df = pd.DataFrame([(r.comparison_id, r.dataset_id, r.delta, r.n_splits_used) for r in records], columns=cols)
    return df.astype({"delta": float, "n_splits_used": np.int64})


def gaps_series(records: list[GapRecord]) -> pd.Series:
    return pd.Series({r.dataset_id: r.delta for r in records}, dtype=float).sort_index()
