"""Dataset meta-feature extraction.

Feature names follow ``<base>.<summarizer>[.<index>]`` for summarised
per-attribute vectors (``attr_ent.skewness``, ``sparsity.histogram.5``) and a
bare ``<name>`` for dataset-level scalars (``d_over_n``).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from scipy.stats import trim_mean

from .rng import SplitMix64, combine
from .stats import midranks

logger = logging.getLogger(__name__)

CONTROL_FEATURES = ("log_n", "log_d", "d_over_n", "cat_fraction", "feature_missing_fraction")
BASIC_FEATURES = ("n", "d") + CONTROL_FEATURES + ("high_cardinality_fraction",)
REDUNDANCY_FEATURES = ("high_corr_pair_fraction", "nr_cor_attr", "effective_rank", "participation_ratio")
COLUMN_BASES = ("mean", "sd", "var", "median", "min", "max", "range", "iq_range", "mad", "t_mean",
                "skewness", "kurtosis", "sparsity")
VECTOR_BASES = COLUMN_BASES + ("cor", "cov", "attr_conc", "attr_ent", "eigenvalues")
SUMMARIZERS = ("mean", "sd", "median", "min", "max", "range", "iq_range", "skewness", "kurtosis") + tuple(
    f"quantiles.{i}" for i in range(5)) + tuple(f"histogram.{i}" for i in range(10))
GROUPS = ("basic", "redundancy", "statistical", "control")


@dataclass(frozen=True)
class ExtractionConfig:
    high_cardinality_threshold: int = 20
    high_corr_threshold: float = 0.8
    nr_cor_threshold: float = 0.5
    pair_cap: int = 5000
    seed: int = 0


@dataclass
class RawDatasetTable:
    """Training rows of one dataset; numeric columns are float64 with NaN for missing."""

    dataset_id: str
    data: pd.DataFrame
    categorical: frozenset[str] = frozenset()

    def __post_init__(self):
        unknown = set(self.categorical) - set(self.data.columns)
        if unknown:
            raise ValueError(f"{self.dataset_id}: categorical columns not in table: {sorted(unknown)}")
        data = self.data.copy()
        for c in data.columns:
            if c in self.categorical:
                data[c] = data[c].astype(object).where(data[c].notna(), None)
            else:
                data[c] = pd.to_numeric(data[c], errors="raise").astype(float)
        self.data = data
        self.categorical = frozenset(self.categorical)

    @property
    def n_rows(self) -> int:
        return len(self.data)

    @property
    def numeric_columns(self) -> list[str]:
        return [c for c in self.data.columns if c not in self.categorical]

    @property
    def categorical_columns(self) -> list[str]:
        return [c for c in self.data.columns if c in self.categorical]

    def numeric_matrix(self) -> np.ndarray:
        return self.data[self.numeric_columns].to_numpy(dtype=float)


# ------------------------------------------------------------------ summarize

def _moments(v: np.ndarray) -> tuple[float, float]:
    """Fisher-Pearson skewness g1 and excess kurtosis g2 (biased moments)."""
    if v.size < 3:
        return math.nan, math.nan
    c = v - v.mean()
    m2 = float(np.mean(c * c))
    if m2 <= 1e-300 or np.ptp(v) == 0:
        return math.nan, math.nan
    m3 = float(np.mean(c ** 3))
    m4 = float(np.mean(c ** 4))
    return m3 / m2 ** 1.5, m4 / (m2 * m2) - 3.0


def histogram(v: np.ndarray, bins: int = 10) -> np.ndarray:
    """Relative frequencies over equal-width bins on [min, max]; a constant vector puts all mass in bin 0."""
    out = np.zeros(bins)
    if v.size == 0:
        return np.full(bins, math.nan)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        out[0] = 1.0
        return out
    # direct bin index rather than np.histogram, which rejects ranges too small for distinct edges
    idx = np.minimum(np.floor((v - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins) / v.size


def summarize(vector, summarizer: str | None = None) -> dict[str, float]:
    """Apply one summarizer (or all of them when ``summarizer`` is None) to a vector.

    Missing and infinite entries are dropped first.  Undefined results are NaN.
    """
    v = np.asarray(vector, dtype=float).ravel()
    v = v[np.isfinite(v)]
    wanted = SUMMARIZERS if summarizer is None else (summarizer,)
    out: dict[str, float] = {}
    hist = quant = moments = None
    for s in wanted:
        if v.size == 0:
            out[s] = math.nan
        elif s == "mean":
            out[s] = float(v.mean())
        elif s == "sd":
            out[s] = float(v.std(ddof=1)) if v.size > 1 else math.nan
        elif s == "median":
            out[s] = float(np.median(v))
        elif s == "min":
            out[s] = float(v.min())
        elif s == "max":
            out[s] = float(v.max())
        elif s == "range":
            out[s] = float(v.max() - v.min())
        elif s == "iq_range":
            q1, q3 = np.quantile(v, [0.25, 0.75])
            out[s] = float(q3 - q1)
        elif s in ("skewness", "kurtosis"):
            if moments is None:
                moments = _moments(v)
            out[s] = moments[0] if s == "skewness" else moments[1]
        elif s.startswith("quantiles."):
            if quant is None:
                quant = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
            out[s] = float(quant[int(s.split(".")[1])])
        elif s.startswith("histogram."):
            if hist is None:
                hist = histogram(v)
            out[s] = float(hist[int(s.split(".")[1])])
        else:
            raise ValueError(f"unknown summarizer {s!r}")
    return out


def summarize_base(base: str, vector) -> dict[str, float]:
    return {f"{base}.{k}": v for k, v in summarize(vector).items()}


# ------------------------------------------------------------------ basic

def extract_basic(table: RawDatasetTable, cfg: ExtractionConfig = ExtractionConfig()) -> dict[str, float]:
    n, d = table.n_rows, table.data.shape[1]
    if d == 0:
        raise ValueError(f"{table.dataset_id}: table has no feature columns")
    if n == 0:
        raise ValueError(f"{table.dataset_id}: table has no rows")
    cats = table.categorical_columns
    missing = int(table.data.isna().to_numpy().sum())
    high_card = sum(table.data[c].dropna().nunique() > cfg.high_cardinality_threshold for c in cats)
    return {
        "n": float(n),
        "d": float(d),
        "log_n": math.log(n),
        "log_d": math.log(d),
        "d_over_n": d / n,
        "cat_fraction": len(cats) / d,
        "feature_missing_fraction": missing / (n * d),
        "high_cardinality_fraction": high_card / d,
    }


def compute_controls(table: RawDatasetTable) -> dict[str, float]:
    basic = extract_basic(table)
    return {k: basic[k] for k in CONTROL_FEATURES}


# ------------------------------------------------------------------ pairwise helpers

def pairwise_moments(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pairwise-complete covariance, Pearson correlation and overlap counts for an (n, d) array with NaN."""
    X = np.asarray(X, dtype=float)
    M = np.isfinite(X)
    with np.errstate(invalid="ignore"):
        centre = np.nanmean(np.where(M, X, np.nan), axis=0) if X.size else np.zeros(X.shape[1])
    centre = np.where(np.isfinite(centre), centre, 0.0)
    Z = np.where(M, X - centre, 0.0)
    Mf = M.astype(float)
    N = Mf.T @ Mf
    Sx = Z.T @ Mf            # Sx[i, j]: sum of column i over rows where j is observed too
    Sxx = (Z * Z).T @ Mf
    Sxy = Z.T @ Z
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = (Sxy - Sx * Sx.T / N) / (N - 1)
        var_i = (Sxx - Sx * Sx / N) / (N - 1)
        full_var = np.diag(var_i).copy()
        corr = cov / np.sqrt(var_i * var_i.T)
    constant = np.array([np.ptp(X[M[:, j], j]) == 0 if M[:, j].any() else True for j in range(X.shape[1])])
    flat = ~(var_i > 1e-12 * full_var[:, None])
    bad = (N < 2) | flat | flat.T | constant[:, None] | constant[None, :]
    corr = np.where(bad, np.nan, np.clip(corr, -1.0, 1.0))
    cov = np.where(N < 2, np.nan, cov)
    return cov, corr, N


def _column_subset(names: list[str], cap: int, rng: SplitMix64) -> list[str]:
    """Columns to use for pair-based features so that at most ``cap`` unordered pairs are formed."""
    d = len(names)
    if d * (d - 1) // 2 <= cap:
        return names
    m = int((1 + math.isqrt(1 + 8 * cap)) // 2)
    while m * (m - 1) // 2 > cap:
        m -= 1
    return [names[i] for i in rng.choice(d, m)]


def _rank_columns(X: np.ndarray) -> np.ndarray:
    R = np.full_like(X, np.nan)
    for j in range(X.shape[1]):
        ok = np.isfinite(X[:, j])
        if ok.any():
            R[ok, j] = midranks(X[ok, j])
    return R


def _upper(a: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(a.shape[0], k=1)
    return a[iu]


def spectrum_summaries(eigenvalues) -> tuple[float, float]:
    """Entropy-based effective rank and participation ratio of a PSD spectrum (negatives clipped)."""
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    total = lam.sum()
    if total <= 0:
        return math.nan, math.nan
    p = lam / total
    p = p[p > 0]
    eff = math.exp(-float(np.sum(p * np.log(p))))
    pr = total ** 2 / float(np.sum(lam * lam))
    return eff, pr


def extract_redundancy(table: RawDatasetTable, cfg: ExtractionConfig = ExtractionConfig()) -> dict[str, float]:
    out = dict.fromkeys(REDUNDANCY_FEATURES, math.nan)
    rng = SplitMix64(combine(cfg.seed, table.dataset_id, "redundancy"))
    cols = _column_subset(table.numeric_columns, cfg.pair_cap, rng)
    if len(cols) < 2:
        logger.debug("%s: fewer than two numeric columns; redundancy features missing", table.dataset_id)
        return out
    R = _rank_columns(table.data[cols].to_numpy(dtype=float))
    _, rho, _ = pairwise_moments(R)
    pairs = _upper(rho)
    pairs = np.abs(pairs[np.isfinite(pairs)])
    if pairs.size:
        out["high_corr_pair_fraction"] = float(np.mean(pairs > cfg.high_corr_threshold))
        out["nr_cor_attr"] = float(np.mean(pairs > cfg.nr_cor_threshold))
    # spectrum over columns whose correlations are defined
    keep = np.isfinite(rho).sum(axis=1) > 1
    if keep.sum() >= 2:
        C = rho[np.ix_(keep, keep)]
        C = np.where(np.isfinite(C), C, 0.0)
        np.fill_diagonal(C, 1.0)
        out["effective_rank"], out["participation_ratio"] = spectrum_summaries(np.linalg.eigvalsh(C))
    return out


# ------------------------------------------------------------------ information-theoretic

def n_bins(m: int, n_distinct: int) -> int:
    return max(1, min(n_distinct, math.ceil(2.0 * m ** (1.0 / 3.0))))


def discretize(values, categorical: bool) -> np.ndarray:
    """Integer codes with -1 for missing.

    Categorical values are coded by level.  Numeric values go to equal-frequency
    bins: with midrank r among the m observed values and k bins, the bin is
    floor((r - 1) * k / m), so ties always share a bin and the coding depends
    only on ranks.
    """
    s = pd.Series(values)
    codes = np.full(len(s), -1, dtype=np.int64)
    ok = s.notna().to_numpy()
    if categorical:
        codes[ok] = pd.factorize(s[ok], sort=True)[0]
        return codes
    v = s.to_numpy(dtype=float)
    ok &= np.isfinite(v)
    m = int(ok.sum())
    if m == 0:
        return codes
    obs = v[ok]
    k = n_bins(m, len(np.unique(obs)))
    r = midranks(obs)
    codes[ok] = np.minimum(np.floor((r - 1.0) * k / m).astype(np.int64), k - 1)
    return codes


def entropy_of_codes(codes: np.ndarray) -> float:
    codes = codes[codes >= 0]
    if codes.size == 0:
        return math.nan
    p = np.bincount(codes) / codes.size
    p = p[p > 0]
    return float(-np.sum(p * np.log(p))) + 0.0


def attr_entropy(column, categorical: bool = False) -> float:
    """Shannon entropy (nats) of a column; numeric columns are discretised first."""
    return entropy_of_codes(discretize(column, categorical))


def goodman_kruskal_tau(x, y) -> float:
    """tau(Y | X): proportional reduction in prediction error of Y given X.

    Inputs are integer codes (-1 = missing) or any hashable labels; only rows
    observed in both are used.  NaN when Y has a single level there.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.dtype.kind in "iu" and y.dtype.kind in "iu":
        ok = (x >= 0) & (y >= 0)
        xs, ys = x[ok], y[ok]
    else:
        ok = pd.notna(x) & pd.notna(y)
        xs = pd.factorize(x[ok])[0]
        ys = pd.factorize(y[ok])[0]
    if xs.size == 0:
        return math.nan
    xs = pd.factorize(xs)[0]
    ys = pd.factorize(ys)[0]
    table = np.zeros((xs.max() + 1, ys.max() + 1))
    np.add.at(table, (xs, ys), 1.0)
    return tau_from_table(table)


def tau_from_table(table) -> float:
    t = np.asarray(table, dtype=float)
    total = t.sum()
    if total <= 0:
        return math.nan
    p = t / total
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    base = 1.0 - float(np.sum(py * py))
    if base <= 1e-15:
        return math.nan
    nz = px > 0
    within = float(np.sum((p[nz] ** 2).sum(axis=1) / px[nz]))
    return float(np.clip((within - float(np.sum(py * py))) / base, 0.0, 1.0))


# ------------------------------------------------------------------ statistical

def column_statistics(v: np.ndarray) -> dict[str, float]:
    """Per-attribute base values of one numeric column (missing already removed)."""
    out = dict.fromkeys(COLUMN_BASES, math.nan)
    m = v.size
    if m == 0:
        return out
    med = float(np.median(v))
    q1, q3 = np.quantile(v, [0.25, 0.75])
    out.update(mean=float(v.mean()), median=med, min=float(v.min()), max=float(v.max()),
               range=float(v.max() - v.min()), iq_range=float(q3 - q1),
               mad=1.4826 * float(np.median(np.abs(v - med))),
               t_mean=float(trim_mean(v, 0.1)))
    if m > 1:
        out["var"] = float(v.var(ddof=1))
        out["sd"] = math.sqrt(out["var"])
        phi = len(np.unique(v))
        out["sparsity"] = (m / phi - 1.0) / (m - 1.0)
    out["skewness"], out["kurtosis"] = _moments(v)
    return out


def statistical_bases(table: RawDatasetTable, cfg: ExtractionConfig = ExtractionConfig()) -> dict[str, np.ndarray]:
    """Base vectors (one value per attribute or attribute pair) before summarisation."""
    bases: dict[str, list[float]] = {b: [] for b in VECTOR_BASES}
    X = table.numeric_matrix()
    for j in range(X.shape[1]):
        col = X[:, j]
        stats = column_statistics(col[np.isfinite(col)])
        for b in COLUMN_BASES:
            bases[b].append(stats[b])

    rng = SplitMix64(combine(cfg.seed, table.dataset_id, "statistical"))
    num_cols = _column_subset(table.numeric_columns, cfg.pair_cap, rng)
    if len(num_cols) >= 2:
        cov, corr, _ = pairwise_moments(table.data[num_cols].to_numpy(dtype=float))
        bases["cor"] = list(np.abs(_upper(corr)))
        bases["cov"] = list(np.abs(_upper(cov)))
    if len(num_cols) >= 1:
        cov, _, N = pairwise_moments(table.data[num_cols].to_numpy(dtype=float))
        keep = np.all(N >= 2, axis=1) & np.isfinite(np.diag(cov))
        if keep.any():
            C = cov[np.ix_(keep, keep)]
            C = np.where(np.isfinite(C), C, 0.0)
            bases["eigenvalues"] = list(np.linalg.eigvalsh((C + C.T) / 2.0)[::-1])

    codes = {c: discretize(table.data[c], c in table.categorical) for c in table.data.columns}
    bases["attr_ent"] = [entropy_of_codes(codes[c]) for c in table.data.columns]

    names = list(table.data.columns)
    d = len(names)
    n_ordered = d * (d - 1)
    if n_ordered:
        if n_ordered <= cfg.pair_cap:
            flat = np.arange(n_ordered)
        else:
            flat = SplitMix64(combine(cfg.seed, table.dataset_id, "attr_conc")).choice(n_ordered, cfg.pair_cap)
        for f in flat:
            i, r = divmod(int(f), d - 1)
            j = r if r < i else r + 1
            bases["attr_conc"].append(goodman_kruskal_tau(codes[names[i]], codes[names[j]]))
    return {b: np.asarray(v, dtype=float) for b, v in bases.items()}


def extract_statistical(table: RawDatasetTable, cfg: ExtractionConfig = ExtractionConfig()) -> dict[str, float]:
    out: dict[str, float] = {}
    for base, vec in statistical_bases(table, cfg).items():
        out.update(summarize_base(base, vec))
    return out


# ------------------------------------------------------------------ full catalog

@dataclass
class MetaFeatureMatrix:
    """Datasets x meta-features, NaN for missing, with each feature's provenance group."""

    values: pd.DataFrame
    groups: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.values = self.values.astype(float)
        self.values.index = self.values.index.astype(str)
        self.values.index.name = "dataset_id"
        missing = [c for c in self.values.columns if c not in self.groups]
        if missing:
            raise ValueError(f"features without a group: {missing[:5]}")
        self.groups = {c: self.groups[c] for c in self.values.columns}

    @property
    def features(self) -> list[str]:
        return list(self.values.columns)

    def controls(self) -> list[str]:
        return [c for c in self.values.columns if self.groups[c] == "control"]

    def to_frame(self) -> pd.DataFrame:
        return self.values.reset_index()

    def groups_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"feature_name": list(self.groups), "group": list(self.groups.values())})

    @classmethod
    def from_frames(cls, matrix: pd.DataFrame, groups: pd.DataFrame) -> "MetaFeatureMatrix":
        values = matrix.set_index("dataset_id")
        return cls(values, dict(zip(groups["feature_name"], groups["group"])))

    def subset(self, columns: Iterable[str]) -> "MetaFeatureMatrix":
        columns = list(columns)
        return MetaFeatureMatrix(self.values[columns].copy(), {c: self.groups[c] for c in columns})


def feature_catalog() -> dict[str, str]:
    """Every feature name the extractor emits, mapped to its group, in emission order."""
    groups = {}
    for name in BASIC_FEATURES:
        groups[name] = "control" if name in CONTROL_FEATURES else "basic"
    for name in REDUNDANCY_FEATURES:
        groups[name] = "redundancy"
    for base in VECTOR_BASES:
        for s in SUMMARIZERS:
            groups[f"{base}.{s}"] = "statistical"
    return groups


def extract_all(table: RawDatasetTable, cfg: ExtractionConfig = ExtractionConfig()) -> dict[str, float]:
    values = {}
    values.update(extract_basic(table, cfg))
    values.update(extract_redundancy(table, cfg))
    values.update(extract_statistical(table, cfg))
    return {k: values.get(k, math.nan) for k in feature_catalog()}


def _extract_job(args):
    table, cfg = args
    return table.dataset_id, extract_all(table, cfg)


def build_matrix(tables: Iterable[RawDatasetTable], cfg: ExtractionConfig = ExtractionConfig(),
                 jobs: int = 1) -> MetaFeatureMatrix:
    tables = sorted(tables, key=lambda t: t.dataset_id)
    work = [(t, cfg) for t in tables]
    if jobs > 1 and len(work) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_job, work))
    else:
        results = [_extract_job(w) for w in work]
    catalog = feature_catalog()
    values = pd.DataFrame([r for _, r in results], index=[i for i, _ in results], columns=list(catalog))
    return MetaFeatureMatrix(values, catalog)


# ------------------------------------------------------------------ dataset loading

def split_train_indices(split_definition: Mapping, n_rows: int) -> dict[tuple[int, int], np.ndarray]:
    """Training row indices per (repeat, fold).

    ``{"type": "explicit", "train_indices": {"0/0": [...], ...}}`` lists them
    directly.  ``{"type": "kfold", "n_repeats": R, "n_folds": K, "seed": s}``
    shuffles rows per repeat with SplitMix64(combine(s, repeat)) and makes
    every K-th shuffled row (offset f) the test part of fold f.
    """
    kind = split_definition.get("type", "kfold")
    out = {}
    if kind == "explicit":
        for key, idx in split_definition["train_indices"].items():
            r, f = (int(x) for x in key.split("/"))
            out[(r, f)] = np.asarray(sorted(idx), dtype=np.int64)
    elif kind == "kfold":
        n_folds = int(split_definition.get("n_folds", 3))
        seed = int(split_definition.get("seed", 0))
        for r in range(int(split_definition.get("n_repeats", 1))):
            perm = SplitMix64(combine(seed, r)).permutation(n_rows)
            for f in range(n_folds):
                test = np.zeros(n_rows, dtype=bool)
                test[perm[f::n_folds]] = True
                out[(r, f)] = np.flatnonzero(~test)
    else:
        raise ValueError(f"unknown split definition type {kind!r}")
    return out


def load_raw_table(entry: Mapping, base_dir: str | os.PathLike = ".", rows: str = "first_split") -> RawDatasetTable:
    """Load the training partition of one manifest entry.

    ``rows="first_split"`` uses the training rows of (repeat 0, fold 0);
    ``rows="union"`` uses every row that is in some training partition.
    """
    path = Path(base_dir) / entry["table_path"]
    cats = list(entry.get("categorical_columns", []))
    df = pd.read_csv(path, dtype={c: str for c in cats}, keep_default_na=True)
    target = entry["target_column"]
    if target not in df.columns:
        raise ValueError(f"{entry['dataset_id']}: target column {target!r} not in {path}")
    df = df.drop(columns=[target])
    splits = split_train_indices(entry.get("split_definition", {"type": "kfold"}), len(df))
    if rows == "first_split":
        idx = splits[min(splits)]
    elif rows == "union":
        idx = np.unique(np.concatenate(list(splits.values())))
    else:
        raise ValueError(f"unknown row selection {rows!r}")
    return RawDatasetTable(entry["dataset_id"], df.iloc[idx].reset_index(drop=True), frozenset(cats))


def load_manifest(path: str | os.PathLike) -> list[dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return doc["datasets"] if isinstance(doc, dict) else doc
