"""Seeded synthetic studies with known ground truth."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .metafeatures import CONTROL_FEATURES, MetaFeatureMatrix, RawDatasetTable
from .rng import SplitMix64, combine
from .store import RESULT_COLUMNS, _write_rows

LINKS = ("linear", "monotone_nonlinear")


@dataclass(frozen=True)
class PlantedStudySpec:
    n_datasets: int = 50
    n_null_features: int = 200
    planted: tuple[tuple[str, float], ...] = (("linear", 1.0),)
    noise_sd: float = 0.715
    missing_rate: float = 0.0
    seed: int = 0
    with_controls: bool = False

    def __post_init__(self):
        if self.n_datasets < 4:
            raise ValueError("n_datasets must be at least 4")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        for link, _ in self.planted:
            if link not in LINKS:
                raise ValueError(f"unknown link {link!r}")


def noise_sd_for_spearman(rho_s: float, beta: float = 1.0) -> float:
    """Noise sd giving population Spearman ``rho_s`` for gap = beta * x + noise with x, noise Gaussian.

    Uses rho_s = (6 / pi) * asin(r / 2) for the bivariate normal with Pearson r.
    """
    r = 2.0 * math.sin(math.pi * rho_s / 6.0)
    return abs(beta) * math.sqrt(1.0 / (r * r) - 1.0)


def _link(kind: str, x: np.ndarray) -> np.ndarray:
    return x if kind == "linear" else np.tanh(x) + 0.1 * x ** 3


def gen_planted_matrix(spec: PlantedStudySpec) -> tuple[MetaFeatureMatrix, pd.Series]:
    """Null features ~ N(0, 1); planted features drive the gap through their link plus Gaussian noise.

    Planted columns are named ``planted_<i>``, nulls ``null_<i>``, and the
    optional controls use the real control names (drawn independently).
    """
    rng = SplitMix64(combine(spec.seed, "planted_study"))
    n = spec.n_datasets
    planted = rng.normal(n * len(spec.planted)).reshape(len(spec.planted), n) if spec.planted else np.zeros((0, n))
    nulls = rng.normal(n * spec.n_null_features).reshape(spec.n_null_features, n)
    noise = rng.normal(n)
    gap = spec.noise_sd * noise
    for (link, beta), x in zip(spec.planted, planted):
        gap = gap + beta * _link(link, x)
    cols: dict[str, np.ndarray] = {}
    groups: dict[str, str] = {}
    for i, x in enumerate(planted):
        cols[f"planted_{i}"] = x
        groups[f"planted_{i}"] = "statistical"
    width = len(str(max(spec.n_null_features - 1, 0)))
    for i, x in enumerate(nulls):
        name = f"null_{i:0{width}d}"
        cols[name] = x
        groups[name] = "statistical"
    if spec.with_controls:
        for name in CONTROL_FEATURES:
            cols[name] = rng.normal(n)
            groups[name] = "control"
    values = pd.DataFrame(cols, index=[f"ds_{i:03d}" for i in range(n)])
    if spec.missing_rate > 0:
        holes = rng.uniform(values.size).reshape(values.shape) < spec.missing_rate
        feature_cols = [c for c in values.columns if groups[c] != "control"]
        mask = pd.DataFrame(holes, index=values.index, columns=values.columns)[feature_cols]
        values[feature_cols] = values[feature_cols].mask(mask)
    return MetaFeatureMatrix(values, groups), pd.Series(gap, index=values.index, name="delta")


def gen_raw_table(column_specs: Sequence[Mapping], n_rows: int, seed: int = 0, dataset_id: str = "synthetic"
                  ) -> RawDatasetTable:
    """Table with analytically known column structure.

    Column spec keys: ``name``, ``kind`` ("categorical" | "numeric") and one of
    ``n_levels`` (balanced categorical: row i gets level i mod K), ``n_distinct``
    (numeric with exactly that many equally frequent values),
    ``distribution`` ("normal" | "uniform"), or ``dependence``:
    ``{"type": "function", "of": name}`` (level = parent level mod n_levels) or
    ``{"type": "product", "with": name}`` (level = (i // K_parent) mod n_levels,
    which gives exact product counts when K_parent * n_levels divides n_rows).
    Rows are shuffled jointly at the end, which leaves every count unchanged.
    """
    if not column_specs:
        raise ValueError("at least one column spec is required")
    rng = SplitMix64(combine(seed, "raw_table"))
    i = np.arange(n_rows)
    data: dict[str, np.ndarray] = {}
    levels: dict[str, int] = {}
    cats = set()
    for k, spec in enumerate(column_specs):
        name = spec.get("name", f"c{k}")
        kind = spec.get("kind", "numeric")
        dep = spec.get("dependence")
        if dep is not None:
            parent = dep.get("of") or dep.get("with")
            K = int(spec.get("n_levels", levels.get(parent, 2)))
            if dep["type"] == "function":
                codes = data[parent].astype(np.int64) % K if parent in cats else (data[parent] > np.median(data[parent])).astype(np.int64)
            elif dep["type"] == "product":
                codes = (i // levels[parent]) % K
            else:
                raise ValueError(f"unknown dependence {dep['type']!r}")
            levels[name] = K
            values = codes.astype(float)
        elif "n_levels" in spec:
            K = int(spec["n_levels"])
            levels[name] = K
            values = (i % K).astype(float)
        elif "n_distinct" in spec:
            values = (i % int(spec["n_distinct"])).astype(float)
        elif spec.get("distribution", "normal") == "uniform":
            values = rng.uniform(n_rows)
        else:
            values = rng.normal(n_rows)
        data[name] = values
        if kind == "categorical":
            cats.add(name)
    perm = rng.permutation(n_rows)
    frame = pd.DataFrame({k: v[perm] for k, v in data.items()})
    for c in cats:
        frame[c] = ["L" + str(int(v)) for v in frame[c]]
    return RawDatasetTable(dataset_id, frame, frozenset(cats))


def gen_benchmark_runs(n_datasets: int, families: Mapping[str, Sequence[str]], offsets: Mapping[str, float] | Sequence[float],
                       seed: int = 0, n_repeats: int = 2, n_folds: int = 3, noise_sd: float = 0.02,
                       val_fidelity: float = 1.0, base_error: float = 0.5,
                       subtypes: Sequence[str] = ("default", "tuned")) -> str:
    """Canonical results CSV for a two-family synthetic benchmark.

    ``families`` maps family id to its methods; the second family's test errors
    are lowered by the per-dataset offset.  Validation errors are
    ``val_fidelity * test + (1 - |val_fidelity|) * noise`` around the same base,
    so fidelity 1 reproduces the test ordering and -1 reverses it.
    """
    fam_ids = list(families)
    methods = [(f, m) for f in fam_ids for m in families[f]]
    if len(methods) < 2 or len(fam_ids) < 2:
        raise ValueError("need at least two methods across at least two families")
    rng = SplitMix64(combine(seed, "benchmark_runs"))
    if isinstance(offsets, Mapping):
        offs = [float(offsets.get(f"ds_{d:03d}", 0.0)) for d in range(n_datasets)]
    else:
        offs = [float(o) for o in offsets]
    rows = []
    for d in range(n_datasets):
        ds = f"ds_{d:03d}"
        for r in range(n_repeats):
            for f in range(n_folds):
                for fam, m in methods:
                    for st in subtypes:
                        eps = noise_sd * rng.normal(2)
                        test = base_error + eps[0] - (offs[d] if fam == fam_ids[1] else 0.0)
                        val = base_error + val_fidelity * (test - base_error) + (1 - abs(val_fidelity)) * eps[1]
                        rows.append((ds, r, f, m, st, "binary", "log_loss", val, test))
    buf = io.StringIO()
    _write_rows(buf, RESULT_COLUMNS, rows)
    return buf.getvalue()


def sweep(n_datasets_grid: Sequence[int] = (25, 51, 100, 200), betas: Sequence[float] = (0.25, 0.5, 1.0),
          n_reps: int = 10, n_null_features: int = 200, noise_sd: float = 1.0, seed: int = 0,
          n_resamples: int = 500) -> pd.DataFrame:
    """Recovery rate of one planted linear feature as a function of sample size and effect size."""
    from .screening import BootstrapConfig, screen_features

    rows = []
    for n in n_datasets_grid:
        for beta in betas:
            kept, qs, cons = [], [], []
            for rep in range(n_reps):
                spec = PlantedStudySpec(n, n_null_features, (("linear", beta),), noise_sd, 0.0,
                                        combine(seed, n, repr(beta), rep))
                matrix, gaps = gen_planted_matrix(spec)
                res = {r.feature_name: r for r in screen_features(
                    matrix, gaps, BootstrapConfig(n_resamples, spec.seed), "sweep")}
                r = res.get("planted_0")
                kept.append(bool(r and r.retained))
                qs.append(r.q_bh if r else math.nan)
                cons.append(r.sign_consistency if r else math.nan)
            rows.append((int(n), float(beta), float(np.mean(kept)), float(np.nanmean(qs)), float(np.nanmean(cons))))
    return pd.DataFrame(rows, columns=["n_datasets", "beta", "retention_rate", "mean_q", "mean_sign_consistency"])
