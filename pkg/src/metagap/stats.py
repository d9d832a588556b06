"""Rank statistics, p-values and multiplicity adjustment."""

from __future__ import annotations

import math

import numpy as np
from scipy import special
from scipy.stats import rankdata


class UndefinedStatistic(ValueError):
    """Raised when a statistic cannot be computed for the given input."""


def midranks(x, axis: int = -1) -> np.ndarray:
    """Average ranks (1-based); ties share the mean of their positions."""
    return rankdata(np.asarray(x, dtype=float), method="average", axis=axis)


def complete_pairs(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"misaligned vectors: {x.shape} vs {y.shape}")
    keep = np.isfinite(x) & np.isfinite(y)
    return x[keep], y[keep]


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0.0:
        raise UndefinedStatistic("constant vector")
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))


def spearman(x, y, min_pairs: int = 3) -> float:
    """Spearman rho over complete pairs: Pearson correlation of midranks."""
    xs, ys = complete_pairs(x, y)
    if xs.size < min_pairs:
        raise UndefinedStatistic(f"{xs.size} complete pairs (< {min_pairs})")
    return pearson(midranks(xs), midranks(ys))


def spearman_pvalue(rho: float, n: int) -> float:
    """Two-sided p-value from the t approximation with n - 2 df."""
    if n < 4:
        raise UndefinedStatistic(f"n = {n} < 4")
    if abs(rho) >= 1.0:
        return 0.0
    df = n - 2
    t2 = rho * rho * df / (1.0 - rho * rho)
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    return float(min(1.0, special.betainc(0.5 * df, 0.5, df / (df + t2))))


def bh_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values; NaN entries pass through and do not count in m."""
    p = np.asarray(p_values, dtype=float)
    q = np.full(p.shape, np.nan)
    ok = np.flatnonzero(~np.isnan(p))
    m = ok.size
    if m == 0:
        return q
    order = ok[np.argsort(p[ok], kind="stable")]
    scaled = p[order] * m / np.arange(1, m + 1)
    q[order] = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    return q


def batched_spearman(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise Spearman rho for 2-D arrays; NaN where either row is constant."""
    return _rowwise_pearson(midranks(x, axis=-1), midranks(y, axis=-1))


def dense_codes(x) -> np.ndarray:
    """0-based dense ranks (equal values share a code)."""
    return np.unique(np.asarray(x, dtype=float), return_inverse=True)[1].astype(np.int64)


def midranks_from_codes(codes: np.ndarray, n_codes: int) -> np.ndarray:
    """Row-wise midranks of 2-D dense codes, via per-row counts instead of sorting."""
    rows, n = codes.shape
    flat = (np.arange(rows, dtype=np.int64)[:, None] * n_codes + codes).ravel()
    counts = np.bincount(flat, minlength=rows * n_codes).reshape(rows, n_codes).astype(float)
    mid = np.cumsum(counts, axis=1) - counts + (counts + 1.0) / 2.0
    return np.take_along_axis(mid, codes, axis=1)


def _rowwise_pearson(rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
    rx = rx - rx.mean(axis=-1, keepdims=True)
    ry = ry - ry.mean(axis=-1, keepdims=True)
    num = (rx * ry).sum(axis=-1)
    den = np.sqrt((rx * rx).sum(axis=-1) * (ry * ry).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(rho, -1.0, 1.0)


def batched_spearman_codes(cx: np.ndarray, cy: np.ndarray, n_codes: int) -> np.ndarray:
    """Row-wise Spearman rho of 2-D dense-code arrays; NaN for constant rows."""
    return _rowwise_pearson(midranks_from_codes(cx, n_codes), midranks_from_codes(cy, n_codes))


def percentile_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval (linear interpolation), ignoring NaN draws."""
    s = np.asarray(samples, dtype=float)
    s = s[~np.isnan(s)]
    if s.size == 0:
        return (math.nan, math.nan)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(s, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
