"""Benchmark run ingestion, study configuration and artifact persistence."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "dataset_id", "repeat", "fold", "method_id", "subtype",
    "problem_type", "metric_name", "val_error", "test_error",
]
INFO_COLUMNS = ["dataset_id", "n_instances", "n_features", "problem_type", "n_classes", "pct_categorical"]
SUBTYPES = ("default", "tuned", "tuned_ensemble")
PROBLEM_TYPES = ("binary", "multiclass", "regression")
RUN_KEY = ["dataset_id", "repeat", "fold", "method_id", "subtype"]
SCHEMA_VERSION = 1


class IngestionError(ValueError):
    pass


class ConflictError(IngestionError):
    pass


class ConfigError(ValueError):
    pass


class ArtifactNotFound(KeyError):
    pass


class IntegrityError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class SplitId:
    repeat_index: int
    fold_index: int

    def __post_init__(self):
        if self.repeat_index < 0 or self.fold_index < 0:
            raise ValueError("split indices must be non-negative")


@dataclass(frozen=True)
class MethodRun:
    dataset_id: str
    split: SplitId
    method_id: str
    subtype: str
    val_error: float
    test_error: float


@dataclass(frozen=True)
class DatasetInfo:
    dataset_id: str
    n_instances: int
    n_features: int
    problem_type: str
    n_classes: int | None
    pct_categorical: float

    def __post_init__(self):
        if self.problem_type not in PROBLEM_TYPES:
            raise ValueError(f"{self.dataset_id}: unknown problem_type {self.problem_type!r}")
        if (self.n_classes is None) != (self.problem_type == "regression"):
            raise ValueError(f"{self.dataset_id}: n_classes must be set iff the task is a classification")
        if not 0.0 <= self.pct_categorical <= 100.0:
            raise ValueError(f"{self.dataset_id}: pct_categorical outside [0, 100]")
        if self.n_instances <= 0 or self.n_features <= 0:
            raise ValueError(f"{self.dataset_id}: sizes must be positive")


@dataclass(frozen=True)
class FamilySpec:
    family_id: str
    # method_id -> allowed subtypes; None admits every subtype present in the store
    members: Mapping[str, frozenset[str] | None]

    def admits(self, method_id: str, subtype: str) -> bool:
        if method_id not in self.members:
            return False
        allowed = self.members[method_id]
        return allowed is None or subtype in allowed


@dataclass(frozen=True)
class ApplicabilityRule:
    max_train_samples: int | None = None
    max_features: int | None = None
    max_classes: int | None = None
    classification_only: bool = False

    def __post_init__(self):
        for name in ("max_train_samples", "max_features", "max_classes"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"applicability bound {name} must be positive, got {v}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ApplicabilityRule":
        unknown = set(d) - {"max_train_samples", "max_features", "max_classes", "classification_only"}
        if unknown:
            raise ConfigError(f"unknown applicability keys: {sorted(unknown)}")
        return cls(
            max_train_samples=d.get("max_train_samples"),
            max_features=d.get("max_features"),
            max_classes=d.get("max_classes"),
            classification_only=bool(d.get("classification_only", False)),
        )


@dataclass(frozen=True)
class ComparisonSpec:
    comparison_id: str
    family_a: str
    family_b: str
    applicability: ApplicabilityRule | None = None

    def __post_init__(self):
        if self.family_a == self.family_b:
            raise ConfigError(f"comparison {self.comparison_id}: family_a and family_b are identical")


@dataclass(frozen=True)
class StudyDefinition:
    families: dict[str, FamilySpec]
    comparisons: list[ComparisonSpec]
    controls: list[str]


class RunStore:
    """Immutable table of MethodRun rows in canonical (dataset, repeat, fold, method, subtype) order."""

    def __init__(self, frame: pd.DataFrame):
        frame = frame.sort_values(RUN_KEY, kind="mergesort").reset_index(drop=True)
        self._frame = frame

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    def __len__(self) -> int:
        return len(self._frame)

    @property
    def dataset_ids(self) -> list[str]:
        return sorted(self._frame["dataset_id"].unique().tolist())

    @property
    def method_ids(self) -> list[str]:
        return sorted(self._frame["method_id"].unique().tolist())

    def runs(self) -> Iterable[MethodRun]:
        for r in self._frame.itertuples(index=False):
            yield MethodRun(r.dataset_id, SplitId(int(r.repeat), int(r.fold)), r.method_id, r.subtype,
                            float(r.val_error), float(r.test_error))

    def to_csv(self) -> str:
        buf = io.StringIO()
        _write_rows(buf, RESULT_COLUMNS, self._frame[RESULT_COLUMNS].itertuples(index=False))
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "True" if v else "False"
    return str(v)


def _write_rows(buf: IO[str], header: list[str], rows) -> None:
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def empty_store() -> RunStore:
    return RunStore(_empty_results())


def _empty_results() -> pd.DataFrame:
    return pd.DataFrame({
        "dataset_id": pd.Series(dtype=object), "repeat": pd.Series(dtype=np.int64),
        "fold": pd.Series(dtype=np.int64), "method_id": pd.Series(dtype=object),
        "subtype": pd.Series(dtype=object), "problem_type": pd.Series(dtype=object),
        "metric_name": pd.Series(dtype=object), "val_error": pd.Series(dtype=float),
        "test_error": pd.Series(dtype=float),
    })


def ingest_results(stream: IO[str] | str | os.PathLike) -> RunStore:
    """Parse a canonical results CSV into a RunStore.

    Raises IngestionError on schema or value problems and ConflictError when
    two lines share a (dataset, split, method, subtype) key.
    """
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, newline="") as fh:
            return ingest_results(fh)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestionError("results table is empty (no header)")
    if header != RESULT_COLUMNS:
        for i, expected in enumerate(RESULT_COLUMNS):
            got = header[i] if i < len(header) else None
            if got != expected:
                raise IngestionError(f"schema mismatch at column {i + 1}: expected {expected!r}, got {got!r}")
        raise IngestionError(f"schema mismatch: unexpected extra column {header[len(RESULT_COLUMNS)]!r}")

    records = []
    seen: dict[tuple, int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(RESULT_COLUMNS):
            raise IngestionError(f"line {lineno}: expected {len(RESULT_COLUMNS)} fields, got {len(row)}")
        rec = dict(zip(RESULT_COLUMNS, row))
        try:
            rec["repeat"] = int(rec["repeat"])
            rec["fold"] = int(rec["fold"])
            SplitId(rec["repeat"], rec["fold"])
            rec["val_error"] = float(rec["val_error"])
            rec["test_error"] = float(rec["test_error"])
        except ValueError as exc:
            raise IngestionError(f"line {lineno}: {exc}") from None
        if not (math.isfinite(rec["val_error"]) and math.isfinite(rec["test_error"])):
            raise IngestionError(f"line {lineno}: non-finite error value")
        if rec["subtype"] not in SUBTYPES:
            raise IngestionError(f"line {lineno}: unknown subtype {rec['subtype']!r}")
        if rec["problem_type"] not in PROBLEM_TYPES:
            raise IngestionError(f"line {lineno}: unknown problem_type {rec['problem_type']!r}")
        key = tuple(rec[k] for k in RUN_KEY)
        if key in seen:
            raise ConflictError(f"duplicate run {key} on lines {seen[key]} and {lineno}")
        seen[key] = lineno
        records.append(rec)
    if not records:
        return empty_store()
    return RunStore(pd.DataFrame.from_records(records, columns=RESULT_COLUMNS))


def store_from_runs(runs: Iterable[MethodRun], problem_type: str = "binary", metric_name: str = "log_loss") -> RunStore:
    """Build a store directly from MethodRun objects (mainly for tests and generators)."""
    buf = io.StringIO()
    _write_rows(buf, RESULT_COLUMNS, (
        (r.dataset_id, r.split.repeat_index, r.split.fold_index, r.method_id, r.subtype,
         problem_type, metric_name, r.val_error, r.test_error) for r in runs))
    buf.seek(0)
    return ingest_results(buf)


def load_dataset_info(path_or_stream) -> list[DatasetInfo]:
    df = pd.read_csv(path_or_stream, dtype=str, keep_default_na=False)
    if list(df.columns) != INFO_COLUMNS:
        raise IngestionError(f"dataset-info header must be {INFO_COLUMNS}, got {list(df.columns)}")
    infos = []
    for lineno, r in enumerate(df.itertuples(index=False), start=2):
        try:
            infos.append(DatasetInfo(
                dataset_id=r.dataset_id, n_instances=int(r.n_instances), n_features=int(r.n_features),
                problem_type=r.problem_type, n_classes=int(r.n_classes) if r.n_classes else None,
                pct_categorical=float(r.pct_categorical)))
        except ValueError as exc:
            raise IngestionError(f"dataset-info line {lineno}: {exc}") from None
    return infos


def _parse_members(family_id: str, raw) -> dict[str, frozenset[str] | None]:
    members: dict[str, frozenset[str] | None] = {}
    for m in raw or []:
        if isinstance(m, str):
            method_id, subtypes = m, None
        else:
            method_id, subtypes = m["method_id"], m.get("subtypes")
        if subtypes is not None:
            bad = set(subtypes) - set(SUBTYPES)
            if bad:
                raise ConfigError(f"family {family_id}: unknown subtypes {sorted(bad)}")
            subtypes = frozenset(subtypes)
        members[method_id] = subtypes
    return members


def load_study_config(doc: Mapping | str | os.PathLike) -> StudyDefinition:
    """Validate the families / comparisons / controls part of a study document."""
    if not isinstance(doc, Mapping):
        with open(doc) as fh:
            doc = json.load(fh)
    for key in ("families", "comparisons"):
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")
    families: dict[str, FamilySpec] = {}
    for f in doc["families"]:
        fid = f["family_id"]
        if fid in families:
            raise ConfigError(f"duplicate family id {fid!r}")
        members = _parse_members(fid, f.get("members"))
        if not members:
            raise ConfigError(f"family {fid!r} has no members")
        families[fid] = FamilySpec(fid, members)

    named_rules = {k: ApplicabilityRule.from_dict(v) for k, v in (doc.get("applicability") or {}).items()}
    comparisons = []
    seen = set()
    for c in doc["comparisons"]:
        cid = c["comparison_id"]
        if cid in seen:
            raise ConfigError(f"duplicate comparison id {cid!r}")
        seen.add(cid)
        for side in ("family_a", "family_b"):
            if c[side] not in families:
                raise ConfigError(f"comparison {cid!r} references unknown family {c[side]!r}")
        rule = c.get("applicability")
        if isinstance(rule, str):
            if rule not in named_rules:
                raise ConfigError(f"comparison {cid!r} references unknown applicability rule {rule!r}")
            rule = named_rules[rule]
        elif isinstance(rule, Mapping):
            rule = ApplicabilityRule.from_dict(rule)
        comparisons.append(ComparisonSpec(cid, c["family_a"], c["family_b"], rule))
    controls = list(doc.get("controls", []))
    return StudyDefinition(families, comparisons, controls)


def check_family_methods(study: StudyDefinition, store: RunStore) -> None:
    """Every method named by a family must appear in the joined run store."""
    present = set(store.method_ids)
    for fam in study.families.values():
        missing = sorted(set(fam.members) - present)
        if missing:
            raise ConfigError(f"family {fam.family_id!r} references methods absent from the results: {missing}")


def train_samples(n_instances: int, n_folds: int = 3) -> int:
    # k-fold outer CV trains on (k-1)/k of the rows
    return (n_instances * (n_folds - 1)) // n_folds


def applicable_datasets(rule: ApplicabilityRule | None, infos: list[DatasetInfo]) -> set[str]:
    if not infos:
        raise ValueError("no dataset descriptors supplied")
    if rule is None:
        return {i.dataset_id for i in infos}
    out = set()
    for info in infos:
        if rule.classification_only and info.problem_type == "regression":
            continue
        if rule.max_train_samples is not None and train_samples(info.n_instances) > rule.max_train_samples:
            continue
        if rule.max_features is not None and info.n_features > rule.max_features:
            continue
        if (rule.max_classes is not None and info.n_classes is not None
                and info.n_classes > rule.max_classes):
            continue
        out.add(info.dataset_id)
    return out


# ---------------------------------------------------------------- artifacts

_NAME_RE = re.compile(r"^[a-z0-9_\-]+$")
MANIFEST = "manifest.json"


def _dtype_tag(s: pd.Series) -> str:
    if pd.api.types.is_bool_dtype(s):
        return "bool"
    if pd.api.types.is_integer_dtype(s):
        return "int"
    if pd.api.types.is_float_dtype(s):
        return "float"
    return "str"


def _decode(values: pd.Series, tag: str) -> pd.Series:
    if tag == "float":
        return pd.Series([math.nan if v == "" else float(v) for v in values], dtype=float)
    if tag == "int":
        return pd.Series([int(v) for v in values], dtype=np.int64)
    if tag == "bool":
        return pd.Series([v == "True" for v in values], dtype=bool)
    return pd.Series([None if v == "" else v for v in values], dtype=object)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ArtifactStore:
    """One directory per study: a CSV per artifact plus a JSON manifest of dtypes and hashes."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def _manifest(self) -> dict:
        p = self.root / MANIFEST
        if not p.exists():
            return {"schema_version": SCHEMA_VERSION, "artifacts": {}}
        with open(p) as fh:
            return json.load(fh)

    def names(self) -> list[str]:
        return sorted(self._manifest()["artifacts"])

    def __contains__(self, name: str) -> bool:
        return name in self._manifest()["artifacts"]

    def persist(self, name: str, table: pd.DataFrame) -> Path:
        if not _NAME_RE.match(name):
            raise ValueError(f"invalid artifact name {name!r}")
        self.root.mkdir(parents=True, exist_ok=True)
        tags = [_dtype_tag(table[c]) for c in table.columns]
        buf = io.StringIO()
        _write_rows(buf, [str(c) for c in table.columns], table.itertuples(index=False))
        data = buf.getvalue().encode("utf-8")
        path = self.root / f"{name}.csv"
        _atomic_write(path, data)
        manifest = self._manifest()
        manifest["artifacts"][name] = {
            "file": path.name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "columns": [str(c) for c in table.columns],
            "dtypes": tags,
        }
        manifest["artifacts"] = dict(sorted(manifest["artifacts"].items()))
        _atomic_write(self.root / MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        return path

    def persist_document(self, filename: str, text: str) -> Path:
        """Write a non-tabular output (e.g. report.md) and record its hash in the manifest."""
        self.root.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        path = self.root / filename
        _atomic_write(path, data)
        manifest = self._manifest()
        docs = manifest.setdefault("documents", {})
        docs[filename] = {"sha256": hashlib.sha256(data).hexdigest()}
        manifest["documents"] = dict(sorted(docs.items()))
        _atomic_write(self.root / MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
        return path

    def load(self, name: str) -> pd.DataFrame:
        entry = self._manifest()["artifacts"].get(name)
        if entry is None:
            raise ArtifactNotFound(name)
        path = self.root / entry["file"]
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise IntegrityError(f"artifact {name!r}: file {path} is missing") from None
        if hashlib.sha256(data).hexdigest() != entry["sha256"]:
            raise IntegrityError(f"artifact {name!r}: content hash mismatch")
        rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
        if not rows or rows[0] != entry["columns"]:
            raise IntegrityError(f"artifact {name!r}: header does not match manifest")
        body = rows[1:]
        cols = {}
        for j, (c, tag) in enumerate(zip(entry["columns"], entry["dtypes"])):
            cols[c] = _decode(pd.Series([r[j] for r in body], dtype=object), tag)
        return pd.DataFrame(cols, columns=entry["columns"])


def persist_artifact(root, name: str, table: pd.DataFrame) -> Path:
    return ArtifactStore(root).persist(name, table)


def load_artifact(root, name: str) -> pd.DataFrame:
    return ArtifactStore(root).load(name)


def bundled_path(filename: str) -> Path:
    """Path of a fixture shipped in the package ``data`` directory (dataset-info table, study document)."""
    path = Path(__file__).with_name("data") / filename
    if not path.exists():
        raise FileNotFoundError(f"no bundled fixture named {filename!r}")
    return path
