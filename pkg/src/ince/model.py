"""Full model (columnar embedder, contextual encoder, decoder), training and evaluation."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, cross_entropy, forward_backward, mse, no_grad, reshape
from .columnar import ColumnarEmbedder
from .data import FitStatistics, PreparedDataset, RawTable, TabularSchema, prepare_split, split_kfold
from .errors import (
    ChecksumError,
    CheckpointError,
    ContractViolation,
    IncompatibleCheckpoint,
    NumericError,
)
from .interaction import InteractionEncoder
from .layers import MLP, Module
from .transformer import TransformerEncoder

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"INCECKPT"
CHECKPOINT_VERSION = 1
INIT_SCHEME = {
    "mlp": "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases",
    "columnar": "uniform(-1/sqrt(l), 1/sqrt(l)) weights, zero biases",
    "cls": "normal(0, 0.02)",
}


@dataclass
class InceConfig:
    latent: int = 32
    n_layers: int = 2
    depth: int = 3
    encoder: str = "in"
    heads: int = 1
    ff: int = 512
    decoder_hidden: int | None = None
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.encoder not in ("in", "transformer"):
            raise ContractViolation(f"encoder must be 'in' or 'transformer', got {self.encoder!r}")
        if self.latent < 1 or self.depth < 1 or self.n_layers < 0:
            raise ContractViolation("latent and depth must be >= 1, n_layers >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractViolation("batch_size must be >= 1 and epochs >= 0")

    @property
    def hidden(self) -> int:
        return self.decoder_hidden or self.latent

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InceConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def replace(self, **changes) -> "InceConfig":
        return InceConfig.from_dict({**self.to_dict(), **changes})


class InceModel(Module):
    """Columnar embedding -> contextual encoder -> CLS -> decoder MLP.

    With ``n_layers == 0`` the encoder is bypassed and the decoder reads the
    flattened columnar embeddings instead (context-free ablation).
    """

    def __init__(self, config: InceConfig, n_numerical: int, cardinalities: list[int],
                 n_outputs: int, task: str):
        self.config = config
        self.task = task
        self.n_outputs = n_outputs
        rng = np.random.default_rng(config.seed)
        l = config.latent
        self.embedder = ColumnarEmbedder(n_numerical, cardinalities, l, rng)
        m = self.embedder.n_features
        if config.n_layers == 0:
            self.encoder = None
            dec_in = m * l
        elif config.encoder == "in":
            self.encoder = InteractionEncoder(l, config.depth, config.n_layers, rng)
            dec_in = l
        else:
            self.encoder = TransformerEncoder(l, config.heads, config.ff, config.n_layers, rng)
            dec_in = l
        h = config.hidden
        self.decoder = MLP([dec_in, h, h, n_outputs], rng)
        self.stats: FitStatistics | None = None
        self.schema: TabularSchema | None = None
        self.history: list[dict] = []

    @classmethod
    def for_dataset(cls, config: InceConfig, ds: PreparedDataset) -> "InceModel":
        model = cls(config, ds.numerical.shape[1], ds.cardinalities, ds.n_outputs, ds.schema.task)
        model.stats = ds.stats
        model.schema = ds.schema
        return model

    @property
    def n_features(self) -> int:
        return self.embedder.n_features

    def encode(self, numerical, categorical):
        """Returns (contextual embedding (B, l) or flattened columnar (B, M*l), encoder output)."""
        columnar = self.embedder(numerical, categorical)
        if self.encoder is None:
            b, m, l = columnar.shape
            return reshape(columnar, (b, m * l)), None
        out = self.encoder(columnar)
        return out.cls, out

    def __call__(self, numerical, categorical) -> Tensor:
        z, _ = self.encode(numerical, categorical)
        return self.decoder(z)

    def loss(self, numerical, categorical, target) -> Tensor:
        out = self(numerical, categorical)
        if self.task == "regression":
            return mse(reshape(out, (out.shape[0],)), target)
        return cross_entropy(out, target)

    def predict_raw(self, ds: PreparedDataset, batch_size: int = 1024) -> np.ndarray:
        """Logits (B, C) for classification, predictions (B,) for regression."""
        outs = []
        with no_grad():
            for start in range(0, ds.n_rows, batch_size):
                sl = slice(start, start + batch_size)
                outs.append(self(ds.numerical[sl], ds.categorical[sl]).data)
        out = np.concatenate(outs, axis=0) if outs else np.zeros((0, self.n_outputs))
        return out[:, 0] if self.task == "regression" else out

    def predict(self, ds: PreparedDataset) -> np.ndarray:
        out = self.predict_raw(ds)
        return out if self.task == "regression" else np.argmax(out, axis=1)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(arrays):
            missing = sorted(set(params) ^ set(arrays))
            raise CheckpointError(f"parameter names differ: {missing[:5]}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise CheckpointError(f"shape mismatch for {k}: {arrays[k].shape} vs {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    def clone(self) -> "InceModel":
        return copy.deepcopy(self)


# -- metrics ----------------------------------------------------------------------


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model: InceModel, ds: PreparedDataset) -> dict:
    """Accuracy (classification) or MSE (regression), the loss, and class counts."""
    if ds.numerical.shape[1] != model.embedder.n_numerical or list(ds.cardinalities) != model.embedder.cardinalities:
        raise ContractViolation("dataset layout does not match the model's schema")
    out = model.predict_raw(ds)
    if model.task == "regression":
        err = float(np.mean((out - ds.target) ** 2)) if ds.n_rows else float("nan")
        return {"metric": "mse", "value": err, "loss": err, "n": int(ds.n_rows)}
    pred = np.argmax(out, axis=1)
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-np.mean(logp[np.arange(ds.n_rows), ds.target])) if ds.n_rows else float("nan")
    c = model.n_outputs
    return {
        "metric": "accuracy",
        "value": float(np.mean(pred == ds.target)) if ds.n_rows else float("nan"),
        "loss": loss,
        "n": int(ds.n_rows),
        "true_counts": np.bincount(ds.target, minlength=c).tolist(),
        "predicted_counts": np.bincount(pred, minlength=c).tolist(),
    }


def higher_is_better(metric: str) -> bool:
    return metric == "accuracy"


# -- training -----------------------------------------------------------------------


@dataclass
class TrainResult:
    final: InceModel
    best: InceModel
    best_epoch: int
    history: list[dict]


def train(config: InceConfig, train_ds: PreparedDataset, val_ds: PreparedDataset | None = None,
          log_path=None) -> TrainResult:
    """Adam on mini-batches for ``config.epochs`` epochs.

    Batches are reshuffled every epoch from a generator seeded by
    ``(seed, epoch)``.  When ``val_ds`` is given the best validation epoch is
    kept as a separate copy of the model.
    """
    model = InceModel.for_dataset(config, train_ds)
    params = model.parameters()
    state = AdamState(lr=config.lr)
    best, best_epoch, best_value = model.clone(), 0, None
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    n = train_ds.n_rows
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
            total = 0.0
            for bi, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start:start + config.batch_size]
                loss = model.loss(train_ds.numerical[idx], train_ds.categorical[idx], train_ds.target[idx])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"loss diverged at epoch {epoch}, batch {bi}")
                grads = forward_backward(loss, params)
                adam_step(params, grads, state)
                total += value * len(idx)
            record = {"epoch": epoch, "train_loss": total / max(n, 1)}
            if val_ds is not None:
                metrics = evaluate(model, val_ds)
                record["val_metric"] = metrics["value"]
                record["val_loss"] = metrics["loss"]
                better = (best_value is None or
                          (metrics["value"] > best_value if higher_is_better(metrics["metric"])
                           else metrics["value"] < best_value))
                if better:
                    best_value, best_epoch = metrics["value"], epoch
                    best = model.clone()
            record["seconds"] = time.perf_counter() - t0
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            log.debug("epoch %d %s", epoch, record)
    finally:
        if log_fh:
            log_fh.close()
    if val_ds is None:
        best, best_epoch = model.clone(), config.epochs
    model.history = history
    best.history = history
    return TrainResult(model, best, best_epoch, history)


# -- cross validation -----------------------------------------------------------------


@dataclass
class FoldResult:
    seed: int
    fold: int
    metric: str
    final: float
    best: float
    best_epoch: int
    train_seconds: float
    history: list[dict] = field(default_factory=list, repr=False)


@dataclass
class CVResult:
    metric: str
    folds: list[FoldResult]

    @property
    def values(self) -> np.ndarray:
        return np.array([f.final for f in self.folds])

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.folds) > 1 else 0.0

    @property
    def best_mean(self) -> float:
        return float(np.mean([f.best for f in self.folds]))

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "mean": self.mean,
            "std": self.std,
            "best_epoch_mean": self.best_mean,
            "folds": [
                {k: v for k, v in asdict(f).items() if k != "history"} for f in self.folds
            ],
        }


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _run_fold(args):
    config, raw, schema, folds, fold, seed, keep_model = args
    train_idx, test_idx = np.flatnonzero(folds != fold), np.flatnonzero(folds == fold)
    train_ds, test_ds = prepare_split(raw, schema, train_idx, test_idx)
    t0 = time.perf_counter()
    result = train(config.replace(seed=_fold_seed(seed, fold)), train_ds, test_ds)
    seconds = time.perf_counter() - t0
    final = evaluate(result.final, test_ds)
    best = evaluate(result.best, test_ds)
    fr = FoldResult(seed, fold, final["metric"], final["value"], best["value"], result.best_epoch,
                    seconds, result.history)
    return fr, (result.final if keep_model else None)


def cross_validate(config: InceConfig, raw: RawTable, schema: TabularSchema, k: int = 5,
                   seeds=(0,), n_jobs: int = 1, keep_models: bool = False):
    """K-fold CV repeated for each seed.

    The reported metric of a fold is the final-epoch model on the held-out
    fold; the best-epoch value on the same fold is stored alongside.
    Returns a :class:`CVResult` (and the trained final models when
    ``keep_models``).
    """
    if k < 2:
        raise ContractViolation("cross validation needs k >= 2")
    jobs = []
    for seed in seeds:
        target = raw.columns[schema.target_name]
        folds = split_kfold(target, k, seed, stratify=schema.is_classification)
        jobs += [(config, raw, schema, folds, f, seed, keep_models) for f in range(k)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_run_fold, jobs))
    else:
        outcomes = [_run_fold(j) for j in jobs]
    outcomes.sort(key=lambda o: (list(seeds).index(o[0].seed), o[0].fold))
    result = CVResult(outcomes[0][0].metric, [o[0] for o in outcomes])
    if keep_models:
        return result, [o[1] for o in outcomes]
    return result


# -- checkpoints ---------------------------------------------------------------------


def save_checkpoint(model: InceModel, path) -> None:
    """Header JSON plus raw little-endian float64 parameter blobs, SHA-256 protected."""
    params = model.parameters()
    blobs, entries, offset = [], [], 0
    for name, p in params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "task": model.task,
        "n_outputs": model.n_outputs,
        "n_numerical": model.embedder.n_numerical,
        "cardinalities": model.embedder.cardinalities,
        "schema": model.schema.to_text() if model.schema else None,
        "stats": json.loads(model.stats.to_json()) if model.stats else None,
        "init": INIT_SCHEME,
        "params": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_checkpoint(path, schema: TabularSchema | None = None) -> InceModel:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        (hlen,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: corrupted header ({exc})") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint version {header.get('version')} != supported {CHECKPOINT_VERSION}"
        )
    payload = data[12 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    saved_schema = TabularSchema.from_text(header["schema"]) if header["schema"] else None
    if schema is not None and saved_schema is not None and schema.n_features != saved_schema.n_features:
        raise CheckpointError(
            f"schema has {schema.n_features} features, checkpoint was trained on {saved_schema.n_features}"
        )
    config = InceConfig.from_dict(header["config"])
    model = InceModel(config, header["n_numerical"], header["cardinalities"], header["n_outputs"], header["task"])
    arrays = {}
    for e in header["params"]:
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    model.load_arrays(arrays)
    model.schema = saved_schema
    model.stats = FitStatistics.from_json(json.dumps(header["stats"])) if header["stats"] else None
    return model


checkpoint_save = save_checkpoint
checkpoint_load = load_checkpoint
