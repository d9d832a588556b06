"""Stage orchestration over a canonical artifact directory."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import pandas as pd

from . import report as report_mod
from .gaps import EPSILON, compute_gaps, gaps_to_frame, normalize_store
from .metafeatures import ExtractionConfig, MetaFeatureMatrix, build_matrix, load_manifest, load_raw_table
from .preprocess import PreprocessConfig, preprocess_matrix
from .rng import combine
from .routing import FEATURE_SET_KINDS, PredictorSpec, evaluate_lodo, per_dataset_frame, predictive_frame
from .screening import (
    BootstrapConfig, association_frame, covariate_adjust, results_from_frame, screen_features,
)
from .store import (
    ArtifactNotFound, ArtifactStore, RESULT_COLUMNS, StudyDefinition, check_family_methods, ingest_results,
    load_dataset_info, load_study_config,
)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "gaps", "metafeatures", "preprocess", "screen", "adjust", "route-eval", "report")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class StageDependencyError(StageError):
    pass


@dataclass
class StudyConfig:
    base_dir: Path
    results_csv: Path
    dataset_manifest: Path | None
    dataset_info_csv: Path | None
    study: StudyDefinition
    seed: int
    output_dir: Path
    epsilon: float = EPSILON
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    extraction_rows: str = "first_split"
    preprocessing: PreprocessConfig = field(default_factory=PreprocessConfig)
    screening: BootstrapConfig = field(default_factory=BootstrapConfig)
    min_pairs: int = 8
    predictive: BootstrapConfig = field(default_factory=lambda: BootstrapConfig(n_resamples=5000))
    feature_sets: tuple[str, ...] = FEATURE_SET_KINDS
    nested: bool = False
    predictors: tuple[PredictorSpec, ...] = (PredictorSpec(),)
    per_split_gaps: bool = False

    @classmethod
    def load(cls, path: str | os.PathLike, seed: int | None = None, out: str | os.PathLike | None = None
             ) -> "StudyConfig":
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        base = path.parent
        seed = doc.get("seed") if seed is None else seed
        if seed is None:
            raise ValueError("the study config must set a seed (or pass --seed)")
        seed = int(seed)

        def resolve(key: str, required: bool = True) -> Path | None:
            v = doc.get(key)
            if v is None:
                if required:
                    raise ValueError(f"config key {key!r} is required")
                return None
            p = (base / v).resolve()
            if not p.exists():
                raise FileNotFoundError(f"config {key!r}: {p} does not exist")
            return p

        ext = dict(doc.get("extraction", {}))
        rows = ext.pop("rows", "first_split")
        scr = doc.get("screening", {})
        pred = doc.get("predictive", {})
        output = Path(out) if out is not None else (base / doc.get("output_dir", "out"))
        return cls(
            base_dir=base,
            results_csv=resolve("results_csv"),
            dataset_manifest=resolve("dataset_manifest", required=False),
            dataset_info_csv=resolve("dataset_info_csv", required=False),
            study=load_study_config(doc),
            seed=seed,
            output_dir=output,
            epsilon=float(doc.get("epsilon", EPSILON)),
            extraction=ExtractionConfig(**{**ext, "seed": seed}),
            extraction_rows=rows,
            preprocessing=PreprocessConfig(**doc.get("preprocessing", {})),
            screening=BootstrapConfig(int(scr.get("n_resamples", 500)), seed, float(scr.get("ci_level", 0.95))),
            min_pairs=int(scr.get("min_pairs", 8)),
            predictive=BootstrapConfig(int(pred.get("n_resamples", 5000)), seed, float(pred.get("ci_level", 0.95))),
            feature_sets=tuple(pred.get("feature_sets", FEATURE_SET_KINDS)),
            nested=bool(pred.get("nested", False)),
            predictors=tuple(PredictorSpec.from_dict(p) for p in doc.get("predictors", [{"kind": "knn"}])),
            per_split_gaps=bool(doc.get("per_split_gaps", False)),
        )


class Pipeline:
    def __init__(self, config: StudyConfig, jobs: int = 1, verbose: bool = False):
        self.config = config
        self.jobs = jobs
        self.verbose = verbose
        self.store = ArtifactStore(config.output_dir)

    def _need(self, stage: str, name: str, producer: str) -> pd.DataFrame:
        try:
            return self.store.load(name)
        except ArtifactNotFound:
            raise StageDependencyError(
                stage, f"missing artifact {name!r}; run `metagap {producer}` (or include it in --stages) first"
            ) from None

    def _matrix(self, stage: str, name: str, producer: str) -> MetaFeatureMatrix:
        return MetaFeatureMatrix.from_frames(self._need(stage, name, producer),
                                             self._need(stage, "feature_groups", "metafeatures"))

    # -------------------------------------------------------------- stages

    def ingest(self) -> None:
        store = ingest_results(self.config.results_csv)
        check_family_methods(self.config.study, store)
        self.store.persist("runs", store.frame[RESULT_COLUMNS])
        logger.info("ingested %d runs over %d datasets", len(store), len(store.dataset_ids))

    def gaps(self) -> None:
        from .store import RunStore
        runs = self._need("gaps", "runs", "ingest")
        store = RunStore(runs)
        infos = load_dataset_info(self.config.dataset_info_csv) if self.config.dataset_info_csv else None
        normalized = normalize_store(store, self.config.epsilon)
        records = []
        for comp in self.config.study.comparisons:
            records.extend(compute_gaps(comp, store, self.config.study, infos, self.config.epsilon, normalized))
        self.store.persist("gaps", gaps_to_frame(records))
        if self.config.per_split_gaps or self.verbose:
            self.store.persist("gaps_per_split", gaps_to_frame(records, per_split=True))

    def metafeatures(self) -> None:
        if self.config.dataset_manifest is None:
            raise StageError("metafeatures", "config has no dataset_manifest")
        entries = load_manifest(self.config.dataset_manifest)
        base = self.config.dataset_manifest.parent
        tables = [load_raw_table(e, base, self.config.extraction_rows) for e in entries]
        matrix = build_matrix(tables, self.config.extraction, jobs=self.jobs)
        self.store.persist("metafeatures_raw", matrix.to_frame())
        self.store.persist("feature_groups", matrix.groups_frame())

    def preprocess(self) -> None:
        raw = self._matrix("preprocess", "metafeatures_raw", "metafeatures")
        cleaned, log = preprocess_matrix(raw, self.config.preprocessing)
        self.store.persist("metafeatures", cleaned.to_frame())
        self.store.persist("drop_log", log.to_frame())

    def _comparison_gaps(self, stage: str) -> dict[str, pd.Series]:
        gaps = self._need(stage, "gaps", "gaps")
        out = {}
        for comp in self.config.study.comparisons:
            sub = gaps[gaps["comparison_id"] == comp.comparison_id]
            out[comp.comparison_id] = pd.Series(sub["delta"].to_numpy(), index=sub["dataset_id"].to_numpy(), dtype=float)
        return out

    def _screen_cfg(self, comparison_id: str) -> BootstrapConfig:
        c = self.config.screening
        return BootstrapConfig(c.n_resamples, combine(self.config.seed, comparison_id), c.ci_level)

    def screen(self) -> None:
        matrix = self._matrix("screen", "metafeatures", "preprocess")
        frames = []
        for cid, gaps in self._comparison_gaps("screen").items():
            if len(gaps) < 4:
                logger.warning("%s: only %d datasets with gaps; not screened", cid, len(gaps))
                continue
            results = screen_features(matrix, gaps, self._screen_cfg(cid), cid, self.config.min_pairs)
            frames.append(association_frame(results))
        self.store.persist("screening", pd.concat(frames, ignore_index=True) if frames else association_frame([]))

    def adjust(self) -> None:
        screening = self._need("adjust", "screening", "screen")
        matrix = self._matrix("adjust", "metafeatures", "preprocess")
        gaps_by = self._comparison_gaps("adjust")
        controls = [c for c in self.config.study.controls if c in matrix.features] or matrix.controls()
        frames = []
        for cid, sub in screening.groupby("comparison_id", sort=False):
            results = results_from_frame(sub)
            gaps = gaps_by[cid]
            common = [d for d in matrix.values.index if d in gaps.index]
            adjusted = {}
            for r in results:
                if not r.retained:
                    continue
                adjusted[r.feature_name] = covariate_adjust(
                    matrix.values.loc[common, r.feature_name], matrix.values.loc[common, controls],
                    gaps.loc[common], self._screen_cfg(cid), r.feature_name, rho=r.rho)
            frames.append(association_frame(results, adjusted))
        self.store.persist("associations", pd.concat(frames, ignore_index=True) if frames else association_frame([]))

    def route_eval(self) -> None:
        matrix = self._matrix("route-eval", "metafeatures", "preprocess")
        wants_robust = any(k in ("robust", "controls_plus_robust") for k in self.config.feature_sets)
        screening = self._need("route-eval", "screening", "screen") if wants_robust and not self.config.nested else None
        results = []
        for cid, gaps in self._comparison_gaps("route-eval").items():
            if len(gaps) < 2:
                logger.warning("%s: fewer than two datasets with gaps; skipped", cid)
                continue
            robust = []
            if screening is not None:
                sub = screening[(screening["comparison_id"] == cid) & screening["retained"]]
                robust = sorted(sub["feature"].tolist())
            sets = [k for k in self.config.feature_sets
                    if self.config.nested or robust or k not in ("robust", "controls_plus_robust")]
            results.extend(evaluate_lodo(cid, matrix, gaps, sets, self.config.predictors, self.config.predictive,
                                         robust, nested=self.config.nested, screen_cfg=self._screen_cfg(cid),
                                         jobs=self.jobs))
        self.store.persist("predictive", predictive_frame(results))
        self.store.persist("predictions", per_dataset_frame(results))

    def report(self) -> None:
        report_mod.emit_report(self.store, [c.comparison_id for c in self.config.study.comparisons])

    def run(self, stages: Sequence[str] = STAGES) -> None:
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stages {unknown}; choose from {list(STAGES)}")
        for stage in [s for s in STAGES if s in stages]:
            logger.info("stage %s", stage)
            try:
                getattr(self, stage.replace("-", "_"))()
            except StageError:
                raise
            except Exception as exc:
                raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
