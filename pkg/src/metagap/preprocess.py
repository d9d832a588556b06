"""Cleaning of the across-dataset meta-feature matrix."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .metafeatures import MetaFeatureMatrix
from .stats import midranks

logger = logging.getLogger(__name__)

REASONS = ("too_missing", "near_constant", "dedup")


@dataclass(frozen=True)
class PreprocessConfig:
    max_missing_fraction: float = 0.20
    near_constant_share: float = 0.99
    min_variance: float = 1e-12
    dedup_threshold: float = 0.95
    min_shared: int = 10


@dataclass
class DropLog:
    entries: list[tuple[str, str, str]] = field(default_factory=list)

    def add(self, feature: str, reason: str, detail: str) -> None:
        assert reason in REASONS
        self.entries.append((feature, reason, detail))

    def dropped(self, reason: str | None = None) -> list[str]:
        return [f for f, r, _ in self.entries if reason is None or r == reason]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries, columns=["feature_name", "reason", "detail"], dtype=object)

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "DropLog":
        return cls([(f, r, d or "") for f, r, d in df[["feature_name", "reason", "detail"]].itertuples(index=False)])


def _near_constant(col: pd.Series, cfg: PreprocessConfig) -> str | None:
    v = col.dropna().to_numpy(dtype=float)
    if v.size == 0:
        return "no observed values"
    share = pd.Series(v).value_counts().iloc[0] / v.size
    if share >= cfg.near_constant_share:
        return f"modal value covers {share:.3f} of observed cells"
    var = float(v.var())
    if var < cfg.min_variance:
        return f"variance {var:.3g}"
    return None


def abs_spearman_matrix(values: pd.DataFrame, min_shared: int) -> np.ndarray:
    """|Spearman| between columns over pairwise-complete rows; NaN below ``min_shared`` shared rows.

    Columns with an identical missingness pattern are ranked once and
    correlated in bulk; other pairs are re-ranked on their shared rows.
    """
    X = values.to_numpy(dtype=float)
    d = X.shape[1]
    out = np.full((d, d), np.nan)
    mask = np.isfinite(X)
    patterns: dict[bytes, list[int]] = {}
    for j in range(d):
        patterns.setdefault(mask[:, j].tobytes(), []).append(j)

    def ranked(rows: np.ndarray, cols: list[int]) -> np.ndarray:
        R = midranks(X[np.ix_(rows, cols)], axis=0)
        R -= R.mean(axis=0)
        norm = np.sqrt((R * R).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            return R / np.where(norm > 0, norm, np.nan)

    groups = list(patterns.values())
    for g in groups:
        rows = mask[:, g[0]]
        if rows.sum() < min_shared:
            continue
        R = ranked(rows, g)
        out[np.ix_(g, g)] = np.abs(np.clip(R.T @ R, -1, 1))
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            ga, gb = groups[a], groups[b]
            rows = mask[:, ga[0]] & mask[:, gb[0]]
            if rows.sum() < min_shared:
                continue
            R = ranked(rows, ga + gb)
            block = np.abs(np.clip(R[:, : len(ga)].T @ R[:, len(ga):], -1, 1))
            out[np.ix_(ga, gb)] = block
            out[np.ix_(gb, ga)] = block.T
    return out


def preprocess_matrix(matrix: MetaFeatureMatrix, cfg: PreprocessConfig = PreprocessConfig()
                      ) -> tuple[MetaFeatureMatrix, DropLog]:
    """Infinities to missing, then drop too-missing, near-constant and redundant features.

    Control features only go through the first step.
    """
    log = DropLog()
    values = matrix.values.replace([np.inf, -np.inf], np.nan)
    controls = set(matrix.controls())
    keep = list(values.columns)

    n_rows = len(values)
    survivors = []
    for c in keep:
        frac = values[c].isna().mean() if n_rows else 1.0
        if c not in controls and frac > cfg.max_missing_fraction:
            log.add(c, "too_missing", f"missing fraction {frac:.3f}")
        else:
            survivors.append(c)
    keep, survivors = survivors, []
    for c in keep:
        why = None if c in controls else _near_constant(values[c], cfg)
        if why:
            log.add(c, "near_constant", why)
        else:
            survivors.append(c)
    keep = survivors

    candidates = [c for c in keep if c not in controls]
    if len(candidates) > 1:
        rho = abs_spearman_matrix(values[candidates], cfg.min_shared)
        adj = np.nan_to_num(rho, nan=0.0) > cfg.dedup_threshold
        np.fill_diagonal(adj, False)
        n_comp, labels = connected_components(csr_matrix(adj), directed=False)
        missing = values[candidates].isna().sum().to_numpy()
        unique = values[candidates].nunique().to_numpy()
        dropped = set()
        for comp in range(n_comp):
            members = np.flatnonzero(labels == comp)
            if members.size < 2:
                continue
            best = min(members, key=lambda j: (missing[j], -unique[j], candidates[j]))
            for j in sorted(members, key=lambda j: candidates[j]):
                if j != best:
                    log.add(candidates[j], "dedup",
                            f"component kept {candidates[best]} (|rho| {rho[j, best]:.3f})"
                            if np.isfinite(rho[j, best]) else f"component kept {candidates[best]}")
                    dropped.add(candidates[j])
        keep = [c for c in keep if c not in dropped]

    cleaned = MetaFeatureMatrix(values[keep].copy(), {c: matrix.groups[c] for c in keep})
    return cleaned, log


def retention_funnel(matrix: MetaFeatureMatrix, log: DropLog) -> pd.DataFrame:
    """Feature counts after each cleaning step."""
    n0 = len(matrix.features)
    counts = [("extracted", n0)]
    left = n0
    for reason in REASONS:
        left -= len(log.dropped(reason))
        counts.append((f"after_{reason}", left))
    return pd.DataFrame(counts, columns=["stage", "n_features"]).astype({"n_features": np.int64})
