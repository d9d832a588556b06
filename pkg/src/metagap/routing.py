"""Leave-one-dataset-out evaluation of gap predictors against mean / majority baselines."""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import sys
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .metafeatures import MetaFeatureMatrix
from .screening import BootstrapConfig, resample_indices, screen_features
from .stats import percentile_interval

logger = logging.getLogger(__name__)

FEATURE_SET_KINDS = ("controls", "all", "controls_plus_all", "robust", "controls_plus_robust")
PREDICTIVE_COLUMNS = ["comparison_id", "predictor", "feature_set", "n", "n_pred", "mae", "mae_lo", "mae_hi",
                      "sign_acc", "sign_lo", "sign_hi"]
EXTERNAL_TIMEOUT = 300.0


class PredictorError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureSetSpec:
    kind: str
    resolved_columns: tuple[str, ...]

    @property
    def n_pred(self) -> int:
        return len(self.resolved_columns)


@dataclass(frozen=True)
class PredictorSpec:
    kind: str = "knn"
    parameters: Mapping = field(default_factory=dict)
    command: str | None = None

    def __post_init__(self):
        if self.kind not in ("knn", "rank_ridge", "external"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise ValueError("external predictor needs a command")

    @property
    def label(self) -> str:
        return self.parameters.get("name", self.kind) if self.parameters else self.kind

    @classmethod
    def from_dict(cls, d: Mapping) -> "PredictorSpec":
        return cls(d.get("kind", "knn"), dict(d.get("parameters", {})), d.get("command"))


@dataclass
class PredictiveResult:
    comparison_id: str
    predictor: str
    feature_set: str
    n: int
    n_pred: int
    mae: float
    mae_ci: tuple[float, float]
    sign_accuracy: float
    sign_ci: tuple[float, float]
    per_dataset: pd.DataFrame  # dataset_id, true_gap, predicted_gap, predicted_sign


def lodo_folds(datasets: Sequence[str]) -> list[tuple[str, list[str]]]:
    ordered = sorted(datasets)
    if len(ordered) < 2:
        raise ValueError("leave-one-dataset-out needs at least two datasets")
    if len(set(ordered)) != len(ordered):
        raise ValueError("duplicate dataset ids")
    return [(d, [o for o in ordered if o != d]) for d in ordered]


def resolve_feature_set(kind: str, matrix: MetaFeatureMatrix, robust: Sequence[str] = ()) -> FeatureSetSpec:
    controls = matrix.controls()
    others = [c for c in matrix.features if c not in controls]
    robust = [c for c in robust if c in matrix.features]
    if kind == "controls":
        cols = controls
    elif kind == "all":
        cols = others
    elif kind == "controls_plus_all":
        cols = controls + others
    elif kind in ("robust", "controls_plus_robust"):
        if not robust:
            raise ValueError("robust feature sets need at least one retained feature")
        cols = list(robust) if kind == "robust" else controls + [c for c in robust if c not in controls]
    else:
        raise ValueError(f"unknown feature set {kind!r}")
    return FeatureSetSpec(kind, tuple(cols))


def baseline_predictions(train_gaps) -> tuple[float, int]:
    """Training-mean gap and the majority sign (ties and all-zero go to +1, i.e. family B)."""
    g = np.asarray(train_gaps, dtype=float)
    if g.size == 0:
        raise ValueError("no training gaps")
    pos, neg = int(np.sum(g > 0)), int(np.sum(g < 0))
    return float(np.mean(g)), (-1 if neg > pos else 1)


# ------------------------------------------------------------------ predictors

def _knn(train_X: np.ndarray, train_y: np.ndarray, test_X: np.ndarray, k: int = 5) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-missing columns
        med = np.nanmedian(np.where(np.isfinite(train_X), train_X, np.nan), axis=0)
    Xtr = np.where(np.isfinite(train_X), train_X, med)
    Xte = np.where(np.isfinite(test_X), test_X, med)
    mu = Xtr.mean(axis=0)
    sd = Xtr.std(axis=0)
    scale = np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)
    Ztr = np.nan_to_num((Xtr - mu) / scale, nan=0.0)  # all-missing columns fall back to 0
    Zte = np.nan_to_num((Xte - mu) / scale, nan=0.0)
    k = min(k, len(train_y))
    preds = np.empty(len(Zte))
    for i, z in enumerate(Zte):
        dist = np.sqrt(((Ztr - z) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(len(dist)), dist))[:k]
        d = dist[order]
        if k == 1:
            preds[i] = float(train_y[order[0]])
        elif np.any(d == 0):
            preds[i] = float(np.mean(train_y[order][d == 0]))
        else:
            w = 1.0 / d
            preds[i] = float(np.sum(w * train_y[order]) / np.sum(w))
    return preds


def _ranks_against(train_col: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Midrank each value would get among the observed training values (1-based)."""
    obs = np.sort(train_col[np.isfinite(train_col)])
    lo = np.searchsorted(obs, values, side="left")
    hi = np.searchsorted(obs, values, side="right")
    r = lo + (hi - lo + 1) / 2.0
    return np.where(np.isfinite(values), r, np.nan)


def _rank_ridge(train_X: np.ndarray, train_y: np.ndarray, test_X: np.ndarray, lam: float = 1.0) -> np.ndarray:
    p = train_X.shape[1]
    Rtr = np.column_stack([_ranks_against(train_X[:, j], train_X[:, j]) for j in range(p)]) if p else train_X
    Rte = np.column_stack([_ranks_against(train_X[:, j], test_X[:, j]) for j in range(p)]) if p else test_X
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mu = np.nanmean(Rtr, axis=0) if p else np.zeros(0)
        sd = np.nanstd(Rtr, axis=0) if p else np.zeros(0)
    mu = np.where(np.isfinite(mu), mu, 0.0)
    scale = np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)
    Ztr = np.nan_to_num((Rtr - mu) / scale, nan=0.0)
    Zte = np.nan_to_num((Rte - mu) / scale, nan=0.0)
    y_mean = float(np.mean(train_y))
    beta = np.linalg.solve(Ztr.T @ Ztr + lam * np.eye(p), Ztr.T @ (train_y - y_mean)) if p else np.zeros(0)
    return y_mean + Zte @ beta


def _json_matrix(X: np.ndarray) -> list[list[float | None]]:
    return [[float(v) if np.isfinite(v) else None for v in row] for row in X]


def run_external(command: str, columns: Sequence[str], train_X, train_y, test_X,
                 timeout: float = EXTERNAL_TIMEOUT) -> np.ndarray:
    """One fold through an external predictor: JSON request on stdin, ``{"pred": [...]}`` on stdout."""
    request = {
        "columns": list(columns),
        "train_X": _json_matrix(np.asarray(train_X, dtype=float)),
        "train_y": [float(v) for v in train_y],
        "test_X": _json_matrix(np.asarray(test_X, dtype=float)),
        "missing": None,
    }
    argv = shlex.split(command)
    if argv and argv[0] == "python":
        argv[0] = sys.executable
    try:
        proc = subprocess.run(argv, input=json.dumps(request), capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise PredictorError(f"external predictor timed out after {timeout} s: {command}") from None
    except OSError as exc:
        raise PredictorError(f"could not launch external predictor {command!r}: {exc}") from None
    if proc.returncode != 0:
        raise PredictorError(f"external predictor exited {proc.returncode}: {proc.stderr.strip()[-2000:]}")
    try:
        pred = json.loads(proc.stdout)["pred"]
        pred = np.asarray([float(v) for v in pred], dtype=float)
    except (ValueError, KeyError, TypeError) as exc:
        raise PredictorError(f"external predictor broke the protocol ({exc}); stdout={proc.stdout[:500]!r}") from None
    if pred.shape != (len(test_X),) or not np.all(np.isfinite(pred)):
        raise PredictorError(f"external predictor returned {pred.shape[0]} values for {len(test_X)} test rows")
    return pred


def fit_predict(predictor: PredictorSpec, train_X, train_y, test_X, columns: Sequence[str] = ()) -> np.ndarray:
    train_X = np.asarray(train_X, dtype=float)
    test_X = np.asarray(test_X, dtype=float)
    train_y = np.asarray(train_y, dtype=float)
    if train_X.ndim == 1:
        train_X = train_X[:, None]
    if test_X.ndim == 1:
        test_X = test_X[None, :]
    if len(train_y) == 0:
        raise ValueError("empty training set")
    if train_X.shape[1] != test_X.shape[1]:
        raise ValueError(f"column mismatch: train {train_X.shape[1]} vs test {test_X.shape[1]}")
    all_missing = ~np.isfinite(train_X).any(axis=0)
    if all_missing.any():
        logger.debug("%d feature columns have no observed training value; imputed as 0", all_missing.sum())
    if predictor.kind == "knn":
        return _knn(train_X, train_y, test_X, int(predictor.parameters.get("k", 5)))
    if predictor.kind == "rank_ridge":
        return _rank_ridge(train_X, train_y, test_X, float(predictor.parameters.get("lambda", 1.0)))
    columns = list(columns) or [f"x{j}" for j in range(train_X.shape[1])]
    return run_external(predictor.command, columns, train_X, train_y, test_X,
                        float(predictor.parameters.get("timeout", EXTERNAL_TIMEOUT)))


# ------------------------------------------------------------------ metrics

def sign_correct(pred, true) -> np.ndarray:
    """A zero prediction counts as correct only against a zero gap."""
    return np.sign(np.asarray(pred, dtype=float)) == np.sign(np.asarray(true, dtype=float))


def _summarize(comparison_id: str, predictor: str, feature_set: str, n_pred: int, per: pd.DataFrame,
               idx: np.ndarray, level: float) -> PredictiveResult:
    err = np.abs(per["true_gap"].to_numpy() - per["predicted_gap"].to_numpy())
    hit = sign_correct(per["predicted_sign"].to_numpy(), per["true_gap"].to_numpy()).astype(float)
    mae_draws = err[idx].mean(axis=1)
    sign_draws = hit[idx].mean(axis=1)
    return PredictiveResult(comparison_id, predictor, feature_set, len(per), n_pred, float(np.mean(err)),
                            percentile_interval(mae_draws, level), float(np.mean(hit)),
                            percentile_interval(sign_draws, level), per)


def _fold_job(args):
    predictor, cols, X, y, held, train_pos = args
    return float(fit_predict(predictor, X[train_pos], y[train_pos], X[[held]], cols)[0])


def evaluate_lodo(comparison_id: str, matrix: MetaFeatureMatrix, gaps: pd.Series,
                  feature_sets: Iterable[str] = FEATURE_SET_KINDS, predictors: Iterable[PredictorSpec] = (PredictorSpec(),),
                  cfg: BootstrapConfig = BootstrapConfig(n_resamples=5000), robust: Sequence[str] = (),
                  nested: bool = False, screen_cfg: BootstrapConfig | None = None, jobs: int = 1,
                  ) -> list[PredictiveResult]:
    """LODO predictions for the baseline row and every (feature set, predictor) pair.

    Bootstrap CIs resample held-out datasets; all rows of one comparison share
    the same resample indices.  With ``nested=True`` the robust sets are
    re-screened inside each training fold instead of using ``robust``.
    """
    gaps = gaps.astype(float).dropna().sort_index()
    datasets = list(gaps.index)
    folds = lodo_folds(datasets)
    values = matrix.values.reindex(datasets)
    y = gaps.to_numpy()
    pos = {d: i for i, d in enumerate(datasets)}
    idx = resample_indices(cfg, len(datasets), "lodo", comparison_id)
    results = []

    mean_pred, sign_pred = [], []
    for held, train in folds:
        m, s = baseline_predictions(y[[pos[t] for t in train]])
        mean_pred.append(m)
        sign_pred.append(s)
    per = pd.DataFrame({"dataset_id": datasets, "true_gap": y, "predicted_gap": mean_pred,
                        "predicted_sign": np.asarray(sign_pred, dtype=float)})
    results.append(_summarize(comparison_id, "baseline", "none", 0, per, idx, cfg.ci_level))

    predictors = list(predictors)
    for kind in feature_sets:
        for predictor in predictors:
            fold_cols: list[tuple[str, ...]] = []
            if kind in ("robust", "controls_plus_robust") and nested:
                for held, train in folds:
                    sub = MetaFeatureMatrix(values.loc[train], matrix.groups)
                    kept = [r.feature_name for r in screen_features(sub, gaps.loc[train], screen_cfg or BootstrapConfig(),
                                                                     comparison_id) if r.retained]
                    fold_cols.append(resolve_feature_set(kind, matrix, kept).resolved_columns if kept else ())
            else:
                try:
                    spec = resolve_feature_set(kind, matrix, robust)
                except ValueError as exc:
                    logger.warning("%s: feature set %s skipped (%s)", comparison_id, kind, exc)
                    break
                if not spec.resolved_columns:
                    logger.warning("%s: feature set %s is empty; skipped", comparison_id, kind)
                    break
                fold_cols = [spec.resolved_columns] * len(folds)
            jobs_args = []
            for (held, train), cols in zip(folds, fold_cols):
                X = values[list(cols)].to_numpy(dtype=float) if cols else np.zeros((len(datasets), 0))
                jobs_args.append((predictor, list(cols), X, y, pos[held], [pos[t] for t in train]))
            preds = _map(_fold_job, jobs_args, jobs)
            per = pd.DataFrame({"dataset_id": datasets, "true_gap": y, "predicted_gap": preds,
                                "predicted_sign": np.sign(preds)})
            n_pred = max(len(c) for c in fold_cols)
            results.append(_summarize(comparison_id, predictor.label, kind, n_pred, per, idx, cfg.ci_level))
    return results


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(a) for a in items]


def predictive_frame(results: list[PredictiveResult]) -> pd.DataFrame:
    rows = [(r.comparison_id, r.predictor, r.feature_set, r.n, r.n_pred, r.mae, r.mae_ci[0], r.mae_ci[1],
             r.sign_accuracy, r.sign_ci[0], r.sign_ci[1]) for r in results]
    df = pd.DataFrame(rows, columns=PREDICTIVE_COLUMNS)
    return df.astype({"comparison_id": object, "predictor": object, "feature_set": object, "n": np.int64,
                      "n_pred": np.int64, **{c: float for c in PREDICTIVE_COLUMNS[5:]}})


def per_dataset_frame(results: list[PredictiveResult]) -> pd.DataFrame:
    parts = [r.per_dataset.assign(comparison_id=r.comparison_id, predictor=r.predictor, feature_set=r.feature_set)
             for r in results]
    cols = ["comparison_id", "predictor", "feature_set", "dataset_id", "true_gap", "predicted_gap", "predicted_sign"]
    if not parts:
        return pd.DataFrame(columns=cols)
    return pd.concat(parts, ignore_index=True)[cols]
