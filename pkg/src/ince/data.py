"""Tabular ingestion, preprocessing and fold assignment.

Numerical columns are z-scored with train-split statistics (population
standard deviation), categorical columns are ordinal-encoded with code 0
reserved for missing or unseen values, and remaining missing cells are
imputed with zero after the transformation.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, ParseError, SchemaError

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
TARGET = "target"
KINDS = (NUMERICAL, CATEGORICAL, TARGET)
TASKS = ("binary", "multiclass", "regression")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass
class TabularSchema:
    """Ordered column declarations plus the learning task.

    Feature order everywhere downstream is numericals first, then
    categoricals, each in declaration order.
    """

    columns: list[Column]
    task: str
    n_classes: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise SchemaError(f"unknown task kind {self.task!r}; expected one of {TASKS}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        for c in self.columns:
            if c.kind not in KINDS:
                raise SchemaError(f"column {c.name!r} has unknown kind {c.kind!r}")
        targets = [c for c in self.columns if c.kind == TARGET]
        if len(targets) != 1:
            raise SchemaError(f"schema needs exactly one target column, found {len(targets)}")
        if not self.feature_names:
            raise SchemaError("schema declares no feature columns")
        if self.task == "binary":
            self.n_classes = 2
        elif self.task == "multiclass" and self.n_classes is not None and self.n_classes < 2:
            raise SchemaError("multiclass task needs at least 2 classes")

    @property
    def numerical_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == NUMERICAL]

    @property
    def categorical_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == CATEGORICAL]

    @property
    def feature_names(self) -> list[str]:
        return self.numerical_names + self.categorical_names

    @property
    def target_name(self) -> str:
        return next(c.name for c in self.columns if c.kind == TARGET)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def is_classification(self) -> bool:
        return self.task != "regression"

    # -- text round trip ------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["task"] = {"kind": self.task}
        if self.task == "multiclass" and self.n_classes is not None:
            cp["task"]["classes"] = str(self.n_classes)
        cp["columns"] = {c.name: c.kind for c in self.columns}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "TabularSchema":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise SchemaError(f"malformed schema file: {exc}") from exc
        if "task" not in cp or "columns" not in cp:
            raise SchemaError("schema file needs [task] and [columns] sections")
        task = cp["task"].get("kind", "").strip()
        classes = cp["task"].get("classes")
        columns = [Column(name, kind.strip()) for name, kind in cp["columns"].items()]
        return cls(columns, task, int(classes) if classes else None)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TabularSchema":
        p = Path(path)
        if not p.is_file():
            raise SchemaError(f"schema file not found: {p}")
        return cls.from_text(p.read_text(encoding="utf-8"))


@dataclass
class RawTable:
    """Typed columns straight from a CSV; missing cells are NaN or None."""

    columns: dict[str, np.ndarray]
    n_rows: int

    def subset(self, idx) -> "RawTable":
        idx = np.asarray(idx)
        return RawTable({k: v[idx] for k, v in self.columns.items()}, int(len(idx)))

    @classmethod
    def from_columns(cls, columns: dict[str, Sequence], schema: TabularSchema) -> "RawTable":
        out = {}
        n = None
        for col in schema.columns:
            if col.name not in columns:
                raise SchemaError(f"missing column {col.name!r}")
            values = list(columns[col.name])
            n = len(values) if n is None else n
            if len(values) != n:
                raise ParseError(f"column {col.name!r} has {len(values)} rows, expected {n}")
            out[col.name] = _typed_column(values, col.kind, schema, col.name)
        return cls(out, n or 0)


def _is_missing(cell) -> bool:
    if cell is None:
        return True
    if isinstance(cell, float) and math.isnan(cell):
        return True
    return isinstance(cell, str) and cell.strip() == ""


def _typed_column(values: list, kind: str, schema: TabularSchema, name: str) -> np.ndarray:
    if kind == NUMERICAL or (kind == TARGET and not schema.is_classification):
        arr = np.empty(len(values))
        for i, v in enumerate(values):
            if _is_missing(v):
                arr[i] = np.nan
                continue
            try:
                arr[i] = float(v)
            except (TypeError, ValueError):
                if kind == TARGET:
                    raise ParseError(f"row {i + 1}: regression target {v!r} is not a number")
                arr[i] = np.nan
        if kind == TARGET and np.isnan(arr).any():
            raise ParseError(f"target column {name!r} has missing values")
        return arr
    arr = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        arr[i] = None if _is_missing(v) else str(v).strip()
    if kind == TARGET and any(v is None for v in arr):
        raise ParseError(f"target column {name!r} has missing values")
    return arr


def load_csv(path, schema: TabularSchema) -> RawTable:
    """Read a header-first UTF-8 CSV and type its columns per ``schema``."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        missing = [c.name for c in schema.columns if c.name not in header]
        if missing:
            raise SchemaError(f"{path}: columns not found in header: {missing}")
        pos = {c.name: header.index(c.name) for c in schema.columns}
        cells: dict[str, list] = {c.name: [] for c in schema.columns}
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}"
                )
            for name, j in pos.items():
                cells[name].append(row[j])
    return RawTable.from_columns(cells, schema)


@dataclass
class FitStatistics:
    """Everything learned from the training split that preprocessing needs."""

    means: dict[str, float]
    stds: dict[str, float]
    categories: dict[str, list[str]]
    classes: list[str] | None
    ddof: int = 0
    warnings: list[str] = field(default_factory=list)

    def cardinality(self, name: str) -> int:
        return len(self.categories[name]) + 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "means": self.means,
                "stds": self.stds,
                "categories": self.categories,
                "classes": self.classes,
                "ddof": self.ddof,
                "warnings": self.warnings,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FitStatistics":
        d = json.loads(text)
        return cls(d["means"], d["stds"], d["categories"], d["classes"], d.get("ddof", 0), d.get("warnings", []))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FitStatistics":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class PreparedDataset:
    numerical: np.ndarray  # (N, M_num) float64
    categorical: np.ndarray  # (N, M_cat) int64
    target: np.ndarray  # (N,) int64 labels or float64 values
    stats: FitStatistics
    schema: TabularSchema
    folds: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.target)

    @property
    def cardinalities(self) -> list[int]:
        return [self.stats.cardinality(n) for n in self.schema.categorical_names]

    @property
    def n_outputs(self) -> int:
        if self.schema.task == "binary":
            return 2
        if self.schema.task == "multiclass":
            return self.schema.n_classes or len(self.stats.classes)
        return 1

    def subset(self, idx) -> "PreparedDataset":
        idx = np.asarray(idx)
        folds = None if self.folds is None else self.folds[idx]
        return PreparedDataset(
            self.numerical[idx], self.categorical[idx], self.target[idx], self.stats, self.schema, folds
        )

    def features(self) -> np.ndarray:
        """All features as one float matrix in node order (categoricals as codes)."""
        return np.concatenate([self.numerical, self.categorical.astype(np.float64)], axis=1)


def fit_statistics(raw: RawTable, schema: TabularSchema) -> FitStatistics:
    means, stds, notes = {}, {}, []
    for name in schema.numerical_names:
        col = raw.columns[name]
        obs = col[~np.isnan(col)]
        mu = float(obs.mean()) if obs.size else 0.0
        sd = float(obs.std()) if obs.size else 0.0
        if not sd > 0.0:
            msg = f"numerical column {name!r} has zero variance; std set to 1"
            warnings.warn(msg, stacklevel=3)
            notes.append(msg)
            sd = 1.0
        means[name], stds[name] = mu, sd
    categories = {
        name: sorted({v for v in raw.columns[name] if v is not None})
        for name in schema.categorical_names
    }
    classes = None
    if schema.is_classification:
        classes = sorted({str(v) for v in raw.columns[schema.target_name]})
        if schema.task == "binary" and len(classes) > 2:
            raise SchemaError(f"binary task but target has {len(classes)} classes")
        if schema.task == "binary" and len(classes) < 2:
            notes.append("binary target shows a single class in the fitting split")
    return FitStatistics(means, stds, categories, classes, 0, notes)


def preprocess(
    raw: RawTable,
    schema: TabularSchema,
    fit_statistics_: FitStatistics | None = None,
    strict: bool = False,
) -> PreparedDataset:
    """Normalize, encode and impute ``raw``.

    Without ``fit_statistics_`` this is the fitting call and statistics are
    estimated from ``raw`` itself.  With ``strict=True`` an unseen category
    raises instead of mapping to the reserved code 0.
    """
    stats = fit_statistics_ if fit_statistics_ is not None else fit_statistics(raw, schema)
    n = raw.n_rows
    num = np.zeros((n, len(schema.numerical_names)))
    for j, name in enumerate(schema.numerical_names):
        col = (raw.columns[name] - stats.means[name]) / stats.stds[name]
        num[:, j] = np.where(np.isnan(col), 0.0, col)
    cat = np.zeros((n, len(schema.categorical_names)), dtype=np.int64)
    for j, name in enumerate(schema.categorical_names):
        index = {v: i + 1 for i, v in enumerate(stats.categories[name])}
        for i, v in enumerate(raw.columns[name]):
            if v is None:
                continue
            code = index.get(v)
            if code is None:
                if strict:
                    raise SchemaError(f"unseen category {v!r} in column {name!r}")
                code = 0
            cat[i, j] = code
    tcol = raw.columns[schema.target_name]
    if schema.is_classification:
        cls_index = {c: i for i, c in enumerate(stats.classes)}
        try:
            target = np.array([cls_index[str(v)] for v in tcol], dtype=np.int64)
        except KeyError as exc:
            raise SchemaError(f"target class {exc.args[0]!r} not seen when fitting") from None
    else:
        target = np.asarray(tcol, dtype=np.float64).copy()
    return PreparedDataset(num, cat, target, stats, schema)


def split_kfold(target: np.ndarray, k: int, seed: int, stratify: bool = True) -> np.ndarray:
    """Fold id per row; stratified by class when ``stratify`` and feasible.

    Rows are shuffled (per class when stratifying), concatenated class after
    class and dealt round-robin, so fold sizes differ by at most one and each
    class is spread as evenly as possible.
    """
    target = np.asarray(target)
    n = len(target)
    if k < 2:
        raise ContractViolation("need at least 2 folds")
    if n < k:
        raise ContractViolation(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    if stratify:
        classes, counts = np.unique(target, return_counts=True)
        if counts.min() < k:
            warnings.warn(
                f"smallest class has {counts.min()} rows < {k} folds; using unstratified split",
                stacklevel=2,
            )
            stratify = False
    if stratify:
        order = np.concatenate([rng.permutation(np.flatnonzero(target == c)) for c in classes])
    else:
        order = rng.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % k
    return folds


def train_test_split(target: np.ndarray, test_fraction: float, seed: int, stratify: bool = True):
    """Index arrays (train, test) using the same dealing scheme as ``split_kfold``."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractViolation("test_fraction must be in (0, 1)")
    k = max(2, int(round(1.0 / test_fraction)))
    folds = split_kfold(target, k, seed, stratify)
    return np.flatnonzero(folds != 0), np.flatnonzero(folds == 0)


def infer_schema(path, target: str, task: str, max_categories: int = 32) -> TabularSchema:
    """Guess column kinds from a CSV: columns that parse as numbers are numerical.

    Convenience only; pass an explicit schema for anything that matters.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = list(reader)
    cols = []
    for j, name in enumerate(header):
        if name == target:
            cols.append(Column(name, TARGET))
            continue
        values = [r[j] for r in rows if j < len(r) and r[j].strip()]
        numeric = True
        for v in values:
            try:
                float(v)
            except ValueError:
                numeric = False
                break
        distinct = len(set(values))
        kind = NUMERICAL if numeric and distinct > max_categories else CATEGORICAL
        if numeric and distinct <= 2:
            kind = CATEGORICAL
        cols.append(Column(name, kind))
    return TabularSchema(cols, task)


def prepare_split(raw: RawTable, schema: TabularSchema, train_idx: Iterable, test_idx: Iterable):
    """Fit preprocessing on ``train_idx`` rows and apply it to both splits."""
    train_raw = raw.subset(np.asarray(train_idx))
    test_raw = raw.subset(np.asarray(test_idx))
    train = preprocess(train_raw, schema)
    return train, preprocess(test_raw, schema, train.stats)
