"""Loaders for the benchmark datasets.

Titanic (Kaggle training file, 891 rows) and UCI Adult are bundled with the
package.  California Housing and HELOC are not redistributable here and are
read from a local path (or, for California Housing, from an existing
scikit-learn cache) when available.
"""

from __future__ import annotations

import csv
import gzip
import io
import os
import re
from importlib import resources
from pathlib import Path

import numpy as np

from ..data import CATEGORICAL, NUMERICAL, TARGET, Column, RawTable, TabularSchema, load_csv
from ..errors import DatasetUnavailable

DATA_DIR_ENV = "INCE_DATA_DIR"

TITANIC_SCHEMA = TabularSchema(
    [
        Column("age", NUMERICAL),
        Column("fare", NUMERICAL),
        Column("sex", CATEGORICAL),
        Column("title", CATEGORICAL),
        Column("pclass", CATEGORICAL),
        Column("family_size", CATEGORICAL),
        Column("is_alone", CATEGORICAL),
        Column("embarked", CATEGORICAL),
        Column("survived", TARGET),
    ],
    "binary",
)

_ADULT_NUMERICAL = ["age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"]
_ADULT_CATEGORICAL = [
    "workclass",
    "education",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "native-country",
]
ADULT_SCHEMA = TabularSchema(
    [Column(c, NUMERICAL) for c in _ADULT_NUMERICAL]
    + [Column(c, CATEGORICAL) for c in _ADULT_CATEGORICAL]
    + [Column("class", TARGET)],
    "binary",
)

CALIFORNIA_FEATURES = [
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
]
CALIFORNIA_SCHEMA = TabularSchema(
    [Column(c, NUMERICAL) for c in CALIFORNIA_FEATURES] + [Column("MedHouseVal", TARGET)],
    "regression",
)

HELOC_CATEGORICAL = ["MaxDelq2PublicRecLast12M", "MaxDelqEver"]
HELOC_NUMERICAL = [
    "ExternalRiskEstimate",
    "MSinceOldestTradeOpen",
    "MSinceMostRecentTradeOpen",
    "AverageMInFile",
    "NumSatisfactoryTrades",
    "NumTrades60Ever2DerogPubRec",
    "NumTrades90Ever2DerogPubRec",
    "PercentTradesNeverDelq",
    "MSinceMostRecentDelq",
    "NumTotalTrades",
    "NumTradesOpeninLast12M",
    "PercentInstallTrades",
    "MSinceMostRecentInqexcl7days",
    "NumInqLast6M",
    "NumInqLast6Mexcl7days",
    "NetFractionRevolvingBurden",
    "NetFractionInstallBurden",
    "NumRevolvingTradesWBalance",
    "NumInstallTradesWBalance",
    "NumBank2NatlTradesWHighUtilization",
    "PercentTradesWBalance",
]
HELOC_SCHEMA = TabularSchema(
    [Column(c, NUMERICAL) for c in HELOC_NUMERICAL]
    + [Column(c, CATEGORICAL) for c in HELOC_CATEGORICAL]
    + [Column("RiskPerformance", TARGET)],
    "binary",
)


def _bundled(name: str):
    return resources.files(__name__).joinpath(name)


def _title(name: str) -> str:
    m = re.search(r",\s*([^.]+)\.", name)
    title = m.group(1).strip() if m else ""
    title = {"Mlle": "Miss", "Ms": "Miss", "Mme": "Mrs"}.get(title, title)
    return title if title in ("Mr", "Mrs", "Miss", "Master") else "Rare"


def load_titanic() -> tuple[RawTable, TabularSchema]:
    """Kaggle Titanic with the usual engineered features (8 features, binary)."""
    text = _bundled("titanic.csv").read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    cols: dict[str, list] = {c.name: [] for c in TITANIC_SCHEMA.columns}
    for r in rows:
        family = int(r["SibSp"]) + int(r["Parch"])
        cols["age"].append(r["Age"])
        cols["fare"].append(r["Fare"])
        cols["sex"].append(r["Sex"])
        cols["title"].append(_title(r["Name"]))
        cols["pclass"].append(r["Pclass"])
        cols["family_size"].append(str(family))
        cols["is_alone"].append("1" if family == 0 else "0")
        cols["embarked"].append(r["Embarked"])
        cols["survived"].append(r["Survived"])
    return RawTable.from_columns(cols, TITANIC_SCHEMA), TITANIC_SCHEMA


def load_adult(n_rows: int | None = None, seed: int = 0) -> tuple[RawTable, TabularSchema]:
    """UCI Adult (train + test files, 48842 rows); optionally a random subsample."""
    with gzip.open(_bundled("adult.csv.gz").open("rb"), "rt", encoding="utf-8") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        header = next(reader)
        rows = [r for r in reader if r]
    if n_rows is not None and n_rows < len(rows):
        keep = np.sort(np.random.default_rng(seed).choice(len(rows), size=n_rows, replace=False))
        rows = [rows[i] for i in keep]
    cols: dict[str, list] = {}
    for j, name in enumerate(header):
        vals = [r[j].strip() for r in rows]
        if name == "class":
            vals = [v.rstrip(".") for v in vals]
        else:
            vals = ["" if v == "?" else v for v in vals]
        cols[name] = vals
    return RawTable.from_columns(cols, ADULT_SCHEMA), ADULT_SCHEMA


def _data_dir() -> Path | None:
    d = os.environ.get(DATA_DIR_ENV)
    return Path(d) if d else None


def load_california_housing(path=None) -> tuple[RawTable, TabularSchema]:
    """California Housing (20640 rows, 8 numerical features, regression).

    ``path`` is a CSV with the scikit-learn column names.  Without a path the
    file ``california_housing.csv`` under ``$INCE_DATA_DIR`` is tried, then an
    existing scikit-learn download cache.
    """
    candidates = [Path(path)] if path else []
    if not path and _data_dir():
        candidates.append(_data_dir() / "california_housing.csv")
    for p in candidates:
        if p.is_file():
            return load_csv(p, CALIFORNIA_SCHEMA), CALIFORNIA_SCHEMA
    if path is None:
        try:
            from sklearn.datasets import fetch_california_housing

            bunch = fetch_california_housing(download_if_missing=False)
        except (OSError, ImportError):
            pass
        else:
            cols = {name: bunch.data[:, j] for j, name in enumerate(CALIFORNIA_FEATURES)}
            cols["MedHouseVal"] = bunch.target
            return RawTable.from_columns(cols, CALIFORNIA_SCHEMA), CALIFORNIA_SCHEMA
    raise DatasetUnavailable(
        "California Housing not found: pass a CSV path, set "
        f"${DATA_DIR_ENV}/california_housing.csv, or populate the scikit-learn cache"
    )


def load_heloc(path=None) -> tuple[RawTable, TabularSchema]:
    """FICO HELOC (rows whose features are all -9 dropped, leaving 9871)."""
    p = Path(path) if path else (_data_dir() / "heloc_dataset_v1.csv" if _data_dir() else None)
    if p is None or not p.is_file():
        raise DatasetUnavailable(
            f"HELOC not found: pass a path or place heloc_dataset_v1.csv under ${DATA_DIR_ENV}"
        )
    raw = load_csv(p, HELOC_SCHEMA)
    feats = [raw.columns[c] for c in HELOC_NUMERICAL]
    feats += [np.array([float(v) if v is not None else np.nan for v in raw.columns[c]]) for c in HELOC_CATEGORICAL]
    all_missing = np.all(np.stack(feats, axis=1) == -9, axis=1)
    return raw.subset(np.flatnonzero(~all_missing)), HELOC_SCHEMA


__all__ = [
    "ADULT_SCHEMA",
    "CALIFORNIA_SCHEMA",
    "HELOC_SCHEMA",
    "TITANIC_SCHEMA",
    "load_adult",
    "load_california_housing",
    "load_heloc",
    "load_titanic",
]
