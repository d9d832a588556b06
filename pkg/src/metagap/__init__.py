"""Meta-feature analysis of model-family performance gaps on tabular benchmarks."""

from .gaps import GapRecord, compute_gaps, normalize_split, select_family_rep
from .metafeatures import MetaFeatureMatrix, RawDatasetTable, build_matrix, extract_all
from .preprocess import DropLog, preprocess_matrix
from .routing import PredictorSpec, evaluate_lodo, lodo_folds
from .screening import BootstrapConfig, covariate_adjust, screen_features
from .stats import bh_adjust, spearman, spearman_pvalue
from .store import (
    ApplicabilityRule, ComparisonSpec, DatasetInfo, FamilySpec, MethodRun, RunStore, SplitId,
    applicable_datasets, ingest_results, load_study_config,
)

__all__ = [
    "ApplicabilityRule", "BootstrapConfig", "ComparisonSpec", "DatasetInfo", "DropLog", "FamilySpec", "GapRecord",
    "MetaFeatureMatrix", "MethodRun", "PredictorSpec", "RawDatasetTable", "RunStore", "SplitId",
    "applicable_datasets", "bh_adjust", "build_matrix", "compute_gaps", "covariate_adjust", "evaluate_lodo",
    "extract_all", "ingest_results", "load_study_config", "lodo_folds", "normalize_split", "preprocess_matrix",
    "screen_features", "select_family_rep", "spearman", "spearman_pvalue",
]
__version__ = "0.1.0"
