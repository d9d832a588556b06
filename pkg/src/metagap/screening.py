"""Robust association screen between meta-features and dataset-level gaps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .metafeatures import MetaFeatureMatrix
from .rng import combine, index_block, sub_seeds
from .stats import (
    UndefinedStatistic, batched_spearman, batched_spearman_codes, bh_adjust, complete_pairs, dense_codes, midranks, percentile_interval,
    spearman, spearman_pvalue,
)

logger = logging.getLogger(__name__)

FDR_LEVEL = 0.05
SIGN_THRESHOLD = 0.90
RIDGE_FLOOR = 1e-8
ASSOCIATION_COLUMNS = ["comparison_id", "feature", "n", "rho", "ci_low", "ci_high", "p", "q_bh",
                       "sign_consistency", "retained", "adj_coef", "adj_ci_low", "adj_ci_high",
                       "adj_sign_consistency"]


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 500
    seed: int = 0
    ci_level: float = 0.95

    def __post_init__(self):
        if self.n_resamples < 2:
            raise ValueError("n_resamples must be at least 2")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must lie in (0, 1)")


@dataclass
class AssociationResult:
    comparison_id: str
    feature_name: str
    n: int
    rho: float
    p_value: float
    q_bh: float
    sign_consistency: float
    ci_low: float
    ci_high: float
    retained: bool


@dataclass
class AdjustedResult:
    feature_name: str
    adj_coef: float
    adj_ci_low: float
    adj_ci_high: float
    adj_sign_consistency: float
    direction_confirmed: bool


def resample_indices(cfg: BootstrapConfig, n: int, *key_words) -> np.ndarray:
    """(B, n) bootstrap row indices; resample b uses sub-seed combine(combine(seed, *key_words), b)."""
    key = combine(cfg.seed, *key_words)
    return index_block(sub_seeds(key, cfg.n_resamples), n)


def _sign_summary(point: float, draws: np.ndarray, level: float) -> tuple[float, float, float]:
    # undefined draws (NaN) never match the point estimate's sign
    consistency = float(np.mean(np.sign(draws) == np.sign(point))) if draws.size else math.nan
    lo, hi = percentile_interval(draws, level)
    return consistency, lo, hi


def bootstrap_rhos(x: np.ndarray, y: np.ndarray, cfg: BootstrapConfig, name: str = "") -> np.ndarray:
    idx = resample_indices(cfg, x.size, "screen", name)
    return batched_spearman(x[idx], y[idx])


def bootstrap_sign_consistency(x, y, cfg: BootstrapConfig = BootstrapConfig(), name: str = ""
                               ) -> tuple[float, float, float]:
    """Fraction of dataset-level resamples whose Spearman rho has the point estimate's sign, plus the percentile CI."""
    xs, ys = complete_pairs(x, y)
    rho = spearman(xs, ys)
    return _sign_summary(rho, bootstrap_rhos(xs, ys, cfg, name), cfg.ci_level)


def _batched_bootstrap(items: list[tuple[str, np.ndarray, np.ndarray]], cfg: BootstrapConfig,
                       chunk_elems: int = 2_000_000) -> dict[str, np.ndarray]:
    """Bootstrap rho draws for many features at once, grouped by sample size."""
    out: dict[str, np.ndarray] = {}
    by_n: dict[int, list] = {}
    for name, x, y in items:
        by_n.setdefault(x.size, []).append((name, x, y))
    for n, group in by_n.items():
        per = max(1, chunk_elems // (cfg.n_resamples * n))
        for s in range(0, len(group), per):
            part = group[s:s + per]
            idx = np.stack([resample_indices(cfg, n, "screen", name) for name, _, _ in part])
            CX = np.stack([dense_codes(x) for _, x, _ in part])
            CY = np.stack([dense_codes(y) for _, _, y in part])
            rows = np.arange(len(part))[:, None, None]
            rhos = batched_spearman_codes(CX[rows, idx].reshape(-1, n), CY[rows, idx].reshape(-1, n), n)
            for k, (name, _, _) in enumerate(part):
                out[name] = rhos.reshape(len(part), cfg.n_resamples)[k]
    return out


def screen_features(matrix: MetaFeatureMatrix | pd.DataFrame, gaps: pd.Series, cfg: BootstrapConfig = BootstrapConfig(),
                    comparison_id: str = "", min_pairs: int = 8, fdr_level: float = FDR_LEVEL,
                    sign_threshold: float = SIGN_THRESHOLD) -> list[AssociationResult]:
    """Spearman screen with BH adjustment over testable features and bootstrap sign consistency.

    Results are sorted by p-value (feature name breaks ties).
    """
    values = matrix.values if isinstance(matrix, MetaFeatureMatrix) else matrix
    gaps = gaps.astype(float)
    common = sorted(set(values.index) & set(gaps.index))
    if len(common) < 4:
        raise ValueError(f"{comparison_id}: need gaps on at least 4 datasets, have {len(common)}")
    values = values.loc[common]
    y_all = gaps.loc[common].to_numpy()

    tested = []
    for feature in sorted(values.columns):
        xs, ys = complete_pairs(values[feature].to_numpy(dtype=float), y_all)
        if xs.size < max(min_pairs, 4):
            logger.debug("%s: %s skipped, %d complete pairs", comparison_id, feature, xs.size)
            continue
        try:
            rho = spearman(xs, ys)
        except UndefinedStatistic as exc:
            logger.debug("%s: %s skipped (%s)", comparison_id, feature, exc)
            continue
        tested.append((feature, xs, ys, rho, spearman_pvalue(rho, xs.size)))
    if not tested:
        logger.warning("%s: no testable features", comparison_id)
        return []

    q = bh_adjust([t[4] for t in tested])
    draws = _batched_bootstrap([(f, xs, ys) for f, xs, ys, _, _ in tested], cfg)
    results = []
    for (feature, xs, ys, rho, p), qv in zip(tested, q):
        cons, lo, hi = _sign_summary(rho, draws[feature], cfg.ci_level)
        results.append(AssociationResult(comparison_id, feature, int(xs.size), rho, p, float(qv), cons, lo, hi,
                                         bool(qv < fdr_level and cons >= sign_threshold)))
    results.sort(key=lambda r: (r.p_value, r.feature_name))
    return results


# ------------------------------------------------------------------ covariate adjustment

def _standardized_ranks(A: np.ndarray) -> np.ndarray:
    """Column-wise midranks scaled to zero mean / unit variance; constant columns become 0."""
    R = midranks(A, axis=0)
    R -= R.mean(axis=0)
    sd = R.std(axis=0)
    return np.where(sd > 0, R / np.where(sd > 0, sd, 1.0), 0.0)


def rank_regression(feature: np.ndarray, controls: np.ndarray, y: np.ndarray) -> float:
    """Standardised coefficient of ``feature`` in a rank-based least-squares fit with controls."""
    Z = _standardized_ranks(np.column_stack([feature, controls]))
    if not np.any(Z[:, 0]):
        return math.nan
    zy = _standardized_ranks(y[:, None])[:, 0]
    X = np.column_stack([np.ones(len(y)), Z])
    gram = X.T @ X + RIDGE_FLOOR * np.eye(X.shape[1])
    beta = np.linalg.solve(gram, X.T @ zy)
    return float(beta[1])


def covariate_adjust(feature_values, controls: pd.DataFrame | np.ndarray, gaps, cfg: BootstrapConfig = BootstrapConfig(),
                     name: str = "", rho: float | None = None, sign_threshold: float = SIGN_THRESHOLD
                     ) -> AdjustedResult:
    """Check that a retained feature keeps its direction once fixed controls enter a rank regression.

    ``rho`` is the univariate Spearman estimate (recomputed on complete cases if omitted).
    """
    x = np.asarray(feature_values, dtype=float)
    C = np.asarray(controls, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    y = np.asarray(gaps, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & np.all(np.isfinite(C), axis=1)
    n_pred = 1 + C.shape[1]
    if ok.sum() < n_pred + 3:
        logger.info("%s: %d complete cases, cannot adjust", name, ok.sum())
        return AdjustedResult(name, math.nan, math.nan, math.nan, math.nan, False)
    x, C, y = x[ok], C[ok], y[ok]
    if rho is None:
        rho = spearman(x, y)
    coef = rank_regression(x, C, y)
    idx = resample_indices(cfg, x.size, "adjust", name)
    draws = np.array([rank_regression(x[i], C[i], y[i]) for i in idx])
    consistency = float(np.mean(np.sign(draws) == np.sign(rho)))
    lo, hi = percentile_interval(draws, cfg.ci_level)
    confirmed = bool(np.sign(coef) == np.sign(rho) and np.sign(rho) != 0 and consistency > sign_threshold)
    return AdjustedResult(name, coef, lo, hi, consistency, confirmed)


def association_frame(results: list[AssociationResult], adjusted: dict[str, AdjustedResult] | None = None
                      ) -> pd.DataFrame:
    adjusted = adjusted or {}
    rows = []
    for r in results:
        a = adjusted.get(r.feature_name)
        rows.append({
            "comparison_id": r.comparison_id, "feature": r.feature_name, "n": r.n, "rho": r.rho,
            "ci_low": r.ci_low, "ci_high": r.ci_high, "p": r.p_value, "q_bh": r.q_bh,
            "sign_consistency": r.sign_consistency, "retained": r.retained,
            "adj_coef": a.adj_coef if a else math.nan, "adj_ci_low": a.adj_ci_low if a else math.nan,
            "adj_ci_high": a.adj_ci_high if a else math.nan,
            "adj_sign_consistency": a.adj_sign_consistency if a else math.nan,
        })
    df = pd.DataFrame(rows, columns=ASSOCIATION_COLUMNS)
    return df.astype({"comparison_id": object, "feature": object, "n": np.int64, "retained": bool,
                      **{c: float for c in ASSOCIATION_COLUMNS if c not in ("comparison_id", "feature", "n", "retained")}})


def results_from_frame(df: pd.DataFrame) -> list[AssociationResult]:
    return [AssociationResult(r.comparison_id, r.feature, int(r.n), r.rho, r.p, r.q_bh, r.sign_consistency,
                              r.ci_low, r.ci_high, bool(r.retained)) for r in df.itertuples(index=False)]
