"""Experiment harness: grid sweeps, persisted runs and the normalized metric.

A run is one model configuration trained with one seed under K-fold cross
validation.  Its directory name is a hash of everything that determines the
result, so rerunning a sweep skips finished runs.  ``metrics.json`` is written
last and marks completion; ``index.json`` is the only file ever rewritten.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import datasets
from .data import RawTable, TabularSchema, load_csv
from .errors import ContractViolation
from .model import InceConfig, cross_validate, higher_is_better, save_checkpoint

log = logging.getLogger(__name__)

BUILTIN = {
    "titanic": datasets.load_titanic,
    "adult": datasets.load_adult,
    "california": datasets.load_california_housing,
    "heloc": datasets.load_heloc,
}
RECOMMENDED = {"depth": 3, "n_layers": 2}


def load_data(data: str, schema: str | None = None, n_rows: int | None = None,
              seed: int = 0) -> tuple[RawTable, TabularSchema]:
    """A bundled dataset by name, or a CSV file described by a schema file."""
    if data in BUILTIN:
        raw, sch = BUILTIN[data]()
    else:
        if schema is None:
            raise ContractViolation(f"a schema file is required for {data}")
        sch = TabularSchema.load(schema)
        raw = load_csv(data, sch)
    if n_rows is not None and n_rows < raw.n_rows:
        idx = np.sort(np.random.default_rng(seed).choice(raw.n_rows, n_rows, replace=False))
        raw = raw.subset(idx)
    return raw, sch


@dataclass
class ExperimentSpec:
    """Dataset, model grid and protocol of a sweep.

    ``sweep="grid"`` takes the cross product of the lists.  ``sweep="axes"``
    instead varies depth with ``n=1`` and stack count with ``d=1`` for every
    latent size, which is all the normalized metric needs.
    """

    data: str
    schema: str | None = None
    latent: list[int] = field(default_factory=lambda: [32])
    n_layers: list[int] = field(default_factory=lambda: [2])
    depth: list[int] = field(default_factory=lambda: [3])
    encoder: list[str] = field(default_factory=lambda: ["in"])
    heads: list[int] = field(default_factory=lambda: [1])
    ff: list[int] = field(default_factory=lambda: [512])
    folds: int = 5
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "runs"
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    n_rows: int | None = None
    sweep: str = "grid"

    def __post_init__(self):
        lists = (self.latent, self.n_layers, self.depth, self.encoder, self.heads, self.ff)
        if any(len(v) == 0 for v in lists):
            raise ContractViolation("every grid axis needs at least one value")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ContractViolation("seeds must be a non-empty list of distinct values")
        if self.sweep not in ("grid", "axes"):
            raise ContractViolation(f"unknown sweep kind {self.sweep!r}")
        if self.folds < 2:
            raise ContractViolation("need at least 2 folds")

    def configs(self) -> list[InceConfig]:
        """Distinct model configurations of the sweep, in a stable order."""
        base = dict(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr)
        points = []
        if self.sweep == "axes":
            for l in self.latent:
                for d in (1, 2, 3, 4):
                    points.append(dict(latent=l, depth=d, n_layers=1, encoder="in"))
                for n in (2, 3, 4):
                    points.append(dict(latent=l, depth=1, n_layers=n, encoder="in"))
        else:
            for l, n, d, enc, h, f in itertools.product(self.latent, self.n_layers, self.depth,
                                                        self.encoder, self.heads, self.ff):
                p = dict(latent=l, n_layers=n, encoder=enc)
                if enc == "transformer":
                    p.update(heads=h, ff=f)
                elif n > 0:
                    p.update(depth=d)
                points.append(p)
        out, seen = [], set()
        for p in points:
            cfg = InceConfig(**base, **p)
            key = json.dumps(cfg.replace(seed=0).to_dict(), sort_keys=True)
            if key not in seen:
                seen.add(key)
                out.append(cfg)
        return out

    def dataset_key(self) -> dict:
        ident = {"data": self.data, "n_rows": self.n_rows}
        if self.data not in BUILTIN:
            ident["sha256"] = hashlib.sha256(Path(self.data).read_bytes()).hexdigest()
        if self.schema:
            ident["schema"] = Path(self.schema).read_text(encoding="utf-8")
        return ident


def run_id(dataset: dict, config: InceConfig, folds: int) -> str:
    blob = json.dumps({"dataset": dataset, "config": config.to_dict(), "folds": folds}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunSummary:
    run_id: str
    config: dict
    dataset: str
    seed: int
    metric: str
    mean: float
    std: float
    trained: bool


def _update_index(root: Path, entry: dict) -> None:
    path = root / "index.json"
    with FileLock(str(root / "index.json.lock")):
        index = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"runs": {}}
        index["runs"][entry["run_id"]] = entry
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(path)


def read_index(out_dir) -> dict:
    path = Path(out_dir) / "index.json"
    if not path.exists():
        return {"runs": {}}
    return json.loads(path.read_text(encoding="utf-8"))


def run_experiment(spec: ExperimentSpec, n_jobs: int = 1) -> list[RunSummary]:
    """Train every grid point for every seed, skipping runs already completed."""
    root = Path(spec.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    raw, schema = load_data(spec.data, spec.schema, spec.n_rows)
    ds_key = spec.dataset_key()
    out = []
    for cfg in spec.configs():
        for seed in spec.seeds:
            config = cfg.replace(seed=seed)
            rid = run_id(ds_key, config, spec.folds)
            run_dir = root / rid
            metrics_path = run_dir / "metrics.json"
            if metrics_path.exists():
                m = json.loads(metrics_path.read_text(encoding="utf-8"))
                out.append(RunSummary(rid, config.to_dict(), spec.data, seed, m["metric"], m["mean"], m["std"], False))
                continue
            log.info("run %s: %s", rid, config)
            run_dir.mkdir(exist_ok=True)
            (run_dir / "config.json").write_text(json.dumps(
                {"config": config.to_dict(), "dataset": ds_key, "folds": spec.folds}, indent=2), encoding="utf-8")
            cv, models = cross_validate(config, raw, schema, k=spec.folds, seeds=(seed,),
                                        n_jobs=n_jobs, keep_models=True)
            with open(run_dir / "log.jsonl", "w", encoding="utf-8") as fh:
                for f in cv.folds:
                    for rec in f.history:
                        fh.write(json.dumps({"fold": f.fold, **rec}) + "\n")
            save_checkpoint(models[0], run_dir / "checkpoint.bin")
            metrics = cv.to_dict()
            metrics_path.write_text(json.dumps(metrics, indent=2), encoding="utf-8")
            _update_index(root, {
                "run_id": rid, "dataset": spec.data, "n_rows": spec.n_rows, "config": config.to_dict(),
                "folds": spec.folds, "metric": cv.metric, "mean": cv.mean, "std": cv.std,
            })
            out.append(RunSummary(rid, config.to_dict(), spec.data, seed, cv.metric, cv.mean, cv.std, True))
    return out


# -- normalized metric -------------------------------------------------------------------


@dataclass
class NormalizedMetricTable:
    """Normalized depth curve ``C_d`` (n=1) and stack curve ``C_n`` (d=1) for one (dataset, l)."""

    dataset: str
    latent: int
    metric: str
    raw_d: list[float]
    raw_n: list[float]
    base: float
    best: float
    c_d: list[float]
    c_n: list[float]
    degenerate: bool = False

    def rows(self) -> list[dict]:
        out = []
        for curve, raw, norm in (("d", self.raw_d, self.c_d), ("n", self.raw_n, self.c_n)):
            for i, (r, c) in enumerate(zip(raw, norm), start=1):
                out.append({"dataset": self.dataset, "latent": self.latent, "metric": self.metric,
                            "curve": curve, "index": i, "raw": r, "normalized": c,
                            "base": self.base, "best": self.best, "degenerate": self.degenerate})
        return out


def normalize_curves(raw_d, raw_n, metric: str, dataset: str = "", latent: int = 0) -> NormalizedMetricTable:
    """Affine map sending Metric(d=1, n=1) to 0 and the best sweep value to 1."""
    raw_d = [float(v) for v in raw_d]
    raw_n = [float(v) for v in raw_n]
    if raw_d[0] != raw_n[0]:
        raise ContractViolation("both curves must start at the same (d=1, n=1) configuration")
    values = raw_d + raw_n
    base = raw_d[0]
    best = max(values) if higher_is_better(metric) else min(values)
    if best == base:
        zeros_d, zeros_n = [0.0] * len(raw_d), [0.0] * len(raw_n)
        return NormalizedMetricTable(dataset, latent, metric, raw_d, raw_n, base, best, zeros_d, zeros_n, True)
    scale = best - base
    return NormalizedMetricTable(
        dataset, latent, metric, raw_d, raw_n, base, best,
        [(v - base) / scale for v in raw_d], [(v - base) / scale for v in raw_n],
    )


def collect_metric_means(out_dir) -> dict:
    """Seed-averaged metric per (dataset, n_rows, encoder, l, d, n)."""
    groups: dict[tuple, list[float]] = {}
    metric_of: dict[tuple, str] = {}
    for entry in read_index(out_dir)["runs"].values():
        c = entry["config"]
        key = (entry["dataset"], entry.get("n_rows"), c["encoder"], c["latent"], c["depth"], c["n_layers"])
        groups.setdefault(key, []).append(entry["mean"])
        metric_of[key] = entry["metric"]
    return {k: (metric_of[k], float(np.mean(v)), len(v)) for k, v in groups.items()}


def normalized_metric(out_dir, depths=(1, 2, 3, 4), stacks=(1, 2, 3, 4)) -> list[NormalizedMetricTable]:
    """One table per (dataset, l) with complete depth and stack curves in the index."""
    means = collect_metric_means(out_dir)
    tables = []
    pairs = sorted({(k[0], k[1], k[3]) for k in means if k[2] == "in"}, key=lambda t: (t[0], str(t[1]), t[2]))
    for data, n_rows, l in pairs:
        d_keys = [(data, n_rows, "in", l, d, 1) for d in depths]
        n_keys = [(data, n_rows, "in", l, 1, n) for n in stacks]
        if not all(k in means for k in d_keys + n_keys):
            log.info("skipping %s l=%d: incomplete sweep", data, l)
            continue
        metric = means[d_keys[0]][0]
        name = data if n_rows is None else f"{data}[{n_rows}]"
        tables.append(normalize_curves([means[k][1] for k in d_keys], [means[k][1] for k in n_keys],
                                       metric, name, l))
    return tables


def average_curves(tables: list[NormalizedMetricTable]) -> tuple[np.ndarray, np.ndarray]:
    """Mean normalized C_d and C_n over datasets and latent sizes."""
    if not tables:
        raise ContractViolation("no complete sweeps to average")
    return (np.mean([t.c_d for t in tables], axis=0), np.mean([t.c_n for t in tables], axis=0))


def write_normalized_csv(tables: list[NormalizedMetricTable], path) -> None:
    fields = ["dataset", "latent", "metric", "curve", "index", "raw", "normalized", "base", "best", "degenerate"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for t in tables:
            for r in t.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def spec_to_json(spec: ExperimentSpec) -> str:
    return json.dumps(asdict(spec), indent=2)
