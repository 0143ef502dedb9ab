"""Feature-feature interaction analysis of a trained interaction-network model.

Pipeline: collect last-layer edge vectors on a test split, fit the pooled mean
and covariance, turn each vector into a squared Mahalanobis distance and a
chi-square tail probability, then average those p-values per directed
feature pair (or per feature-value pair).  Lower p means a more unusual,
hence more informative, message.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import no_grad
from .data import PreparedDataset
from .errors import ContractViolation, NumericError, UnsupportedOperation
from .interaction import build_graph
from .stats import chi2_sf, spearman_rank

MEAN_LABEL = "Mean"


@dataclass(frozen=True)
class EdgeInteractionRecord:
    row: int
    source: int
    destination: int
    vector: np.ndarray
    d2: float | None = None
    p: float | None = None


@dataclass
class EdgeRecords:
    """Column-oriented store of edge records (one entry per row and directed edge)."""

    rows: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    vectors: np.ndarray  # (R, l)
    n_features: int
    d2: np.ndarray | None = None
    p: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def latent(self) -> int:
        return self.vectors.shape[1]

    def record(self, k: int) -> EdgeInteractionRecord:
        return EdgeInteractionRecord(
            int(self.rows[k]), int(self.src[k]), int(self.dst[k]), self.vectors[k],
            None if self.d2 is None else float(self.d2[k]),
            None if self.p is None else float(self.p[k]),
        )

    def select(self, mask: np.ndarray) -> "EdgeRecords":
        return EdgeRecords(
            self.rows[mask], self.src[mask], self.dst[mask], self.vectors[mask], self.n_features,
            None if self.d2 is None else self.d2[mask], None if self.p is None else self.p[mask],
        )

    def is_cls_edge(self) -> np.ndarray:
        return (self.src == self.n_features) | (self.dst == self.n_features)


def collect_edge_vectors(model, ds: PreparedDataset, include_cls: bool = False,
                         batch_size: int = 256) -> EdgeRecords:
    """Final edge states of the last interaction layer for every test row.

    Feature-feature edges only unless ``include_cls``; ordering is row-major,
    then the canonical edge order.
    """
    if model.encoder is None or getattr(model.encoder, "kind", None) != "in":
        raise UnsupportedOperation("edge interactions need an interaction-network encoder")
    m = model.n_features
    graph = build_graph(m)
    keep = np.ones(graph.n_edges, bool) if include_cls else graph.feature_edge_mask()
    chunks = []
    with no_grad():
        for start in range(0, ds.n_rows, batch_size):
            sl = slice(start, start + batch_size)
            _, out = model.encode(ds.numerical[sl], ds.categorical[sl])
            chunks.append(out.edges.data[:, keep, :])
    vectors = np.concatenate(chunks, axis=0)  # (N, E', l)
    n, e, l = vectors.shape
    return EdgeRecords(
        np.repeat(np.arange(n), e),
        np.tile(graph.src[keep], n),
        np.tile(graph.dst[keep], n),
        vectors.reshape(n * e, l),
        m,
    )


@dataclass
class PopulationStats:
    mean: np.ndarray
    cov: np.ndarray
    ridge: float
    count: int

    @property
    def latent(self) -> int:
        return len(self.mean)


def fit_population_stats(records, ridge_scale: float = 1e-8, ridge_floor: float = 1e-12) -> PopulationStats:
    """Pooled sample mean and covariance (ddof=1) with a ridge ``lambda * I``.

    ``lambda = ridge_scale * trace(S) / l``, never below ``ridge_floor``.
    """
    vectors = records.vectors if isinstance(records, EdgeRecords) else np.asarray(records, dtype=np.float64)
    count, l = vectors.shape
    if count <= l:
        raise ContractViolation(f"need more than {l} records to estimate an {l}x{l} covariance")
    mean = vectors.mean(axis=0)
    centered = vectors - mean
    cov = centered.T @ centered / (count - 1)
    ridge = max(ridge_scale * float(np.trace(cov)) / l, ridge_floor)
    cov = cov + ridge * np.eye(l)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericError("covariance is not positive definite after regularization") from None
    return PopulationStats(mean, cov, ridge, count)


def mahalanobis_pvalue(e, mean, cov, dof: int | None = None):
    """Squared Mahalanobis distance(s) of ``e`` from ``mean`` and the chi-square tail p-value(s)."""
    e = np.asarray(e, dtype=np.float64)
    diff = np.atleast_2d(e) - mean
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, diff.T)
    d2 = np.maximum(np.sum(z * z, axis=0), 0.0)
    p = chi2_sf(d2, dof if dof is not None else len(mean))
    if e.ndim == 1:
        return float(d2[0]), float(np.asarray(p).reshape(-1)[0])
    return d2, p


def score_records(records: EdgeRecords, stats: PopulationStats | None = None) -> PopulationStats:
    """Fill ``records.d2`` and ``records.p`` in place; returns the population used."""
    stats = stats or fit_population_stats(records)
    records.d2, records.p = mahalanobis_pvalue(records.vectors, stats.mean, stats.cov, stats.latent)
    return stats


# -- aggregation ------------------------------------------------------------------------


@dataclass
class Heatmap:
    labels_rows: list[str]
    labels_cols: list[str]
    values: np.ndarray  # NaN where no data

    @property
    def row_means(self) -> np.ndarray:
        return _nanmean(self.values, axis=1)

    @property
    def col_means(self) -> np.ndarray:
        return _nanmean(self.values, axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([""] + self.labels_cols + [MEAN_LABEL])
            for label, row, rm in zip(self.labels_rows, self.values, self.row_means):
                w.writerow([label] + [_fmt(v) for v in row] + [_fmt(rm)])
            w.writerow([MEAN_LABEL] + [_fmt(v) for v in self.col_means] + [""])

    @classmethod
    def read_csv(cls, path) -> tuple["Heatmap", np.ndarray, np.ndarray]:
        """Returns the heatmap and the stored Mean column / Mean row."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        cols = rows[0][1:-1]
        body = rows[1:-1]
        labels = [r[0] for r in body]
        values = np.array([[_parse(v) for v in r[1:-1]] for r in body])
        mean_col = np.array([_parse(r[-1]) for r in body])
        mean_row = np.array([_parse(v) for v in rows[-1][1:-1]])
        return cls(labels, cols, values), mean_col, mean_row


def _fmt(v: float) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def _parse(s: str) -> float:
    return float(s) if s else float("nan")


def _nanmean(a: np.ndarray, axis: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(a, axis=axis)


@dataclass
class InteractionSummary:
    feature_names: list[str]
    edge_p: np.ndarray  # (M, M) mean p(j1 -> j2), NaN on the diagonal
    n_rows: int
    value_heatmap: Heatmap | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def symmetric_p(self) -> np.ndarray:
        return 0.5 * (self.edge_p + self.edge_p.T)

    @property
    def feature_scores(self) -> np.ndarray:
        """p(j): mean over neighbours k of the symmetrized p(j, k)."""
        return _nanmean(self.symmetric_p, axis=1)

    def feature_heatmap(self) -> Heatmap:
        return Heatmap(list(self.feature_names), list(self.feature_names), self.edge_p.copy())

    def to_json(self) -> str:
        return json.dumps({
            "features": self.feature_names,
            "edge_p": [[None if np.isnan(v) else float(v) for v in row] for row in self.edge_p],
            "feature_scores": [float(v) for v in self.feature_scores],
            "n_rows": self.n_rows,
            "warnings": self.warnings,
        }, indent=2)


def value_labels(ds: PreparedDataset) -> list[np.ndarray]:
    """Per feature, the group label of every row: categorical ``name=value``, numerical ``name``."""
    out = []
    for name in ds.schema.numerical_names:
        out.append(np.full(ds.n_rows, name, dtype=object))
    for j, name in enumerate(ds.schema.categorical_names):
        cats = ["<missing>"] + list(ds.stats.categories[name])
        out.append(np.array([f"{name}={cats[c]}" for c in ds.categorical[:, j]], dtype=object))
    return out


def aggregate_interactions(records: EdgeRecords, n_test: int, feature_names: list[str] | None = None,
                           labels: list[np.ndarray] | None = None) -> InteractionSummary:
    """Average per-row p-values per directed feature pair (and per value pair when ``labels``)."""
    if records.p is None:
        raise ContractViolation("records have no p-values; call score_records first")
    m = records.n_features
    names = feature_names or [f"f{j}" for j in range(m)]
    ff = ~records.is_cls_edge()
    src, dst, p = records.src[ff], records.dst[ff], records.p[ff]
    sums = np.zeros((m, m))
    counts = np.zeros((m, m))
    np.add.at(sums, (src, dst), p)
    np.add.at(counts, (src, dst), 1.0)
    notes = []
    edge_p = np.full((m, m), np.nan)
    nz = counts > 0
    edge_p[nz] = sums[nz] / counts[nz]
    expected = counts[nz]
    if expected.size and not np.all(expected == n_test):
        notes.append("some edges have a record count different from the test size")
    heat = None
    if labels is not None:
        heat = _value_heatmap(records.rows[ff], src, dst, p, labels, notes)
    return InteractionSummary(names, edge_p, n_test, heat, notes)


def _value_heatmap(rows, src, dst, p, labels, notes) -> Heatmap:
    ordered: list[str] = []
    feature_of: dict[str, int] = {}
    for j, col in enumerate(labels):
        for lab in sorted(set(col)):
            ordered.append(lab)
            feature_of[lab] = j
    index = {lab: i for i, lab in enumerate(ordered)}
    src_lab = np.array([index[labels[s][r]] for s, r in zip(src, rows)], dtype=np.intp)
    dst_lab = np.array([index[labels[d][r]] for d, r in zip(dst, rows)], dtype=np.intp)
    k = len(ordered)
    sums = np.zeros((k, k))
    counts = np.zeros((k, k))
    np.add.at(sums, (src_lab, dst_lab), p)
    np.add.at(counts, (src_lab, dst_lab), 1.0)
    values = np.full((k, k), np.nan)
    nz = counts > 0
    values[nz] = sums[nz] / counts[nz]
    empty = [(a, b) for a in range(k) for b in range(k)
             if not nz[a, b] and feature_of[ordered[a]] != feature_of[ordered[b]]]
    if empty:
        msg = f"{len(empty)} feature-value groups have no rows and were omitted"
        warnings.warn(msg, stacklevel=3)
        notes.append(msg)
    return Heatmap(ordered, list(ordered), values)


# -- Shapley oracle ------------------------------------------------------------------------


def _coalition_weights(m: int) -> np.ndarray:
    return np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)])


def exact_shapley_values(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, background: np.ndarray,
                         max_features: int = 10) -> np.ndarray:
    """Exact Shapley values by enumerating all ``2^M`` coalitions.

    ``f`` maps a (K, M) feature matrix to K outputs; absent features take the
    ``background`` value.  Returns an (N, M) array; each row sums to
    ``f(x) - f(background)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, m = x.shape
    if m > max_features:
        raise ContractViolation(
            f"{m} features means 2^{m} coalitions; subsample to at most {max_features} features"
        )
    background = np.asarray(background, dtype=np.float64).reshape(m)
    n_coal = 1 << m
    masks = ((np.arange(n_coal)[:, None] >> np.arange(m)) & 1).astype(bool)  # (C, M)
    inputs = np.where(masks[None, :, :], x[:, None, :], background[None, None, :])  # (N, C, M)
    values = np.asarray(f(inputs.reshape(n * n_coal, m)), dtype=np.float64).reshape(n, n_coal)
    sizes = masks.sum(axis=1)
    weights = _coalition_weights(m)
    phi = np.zeros((n, m))
    coal = np.arange(n_coal)
    for j in range(m):
        without = coal[~masks[:, j]]
        with_j = without | (1 << j)
        w = weights[sizes[without]]
        phi[:, j] = (values[:, with_j] - values[:, without]) @ w
    return phi


def model_output_fn(model, target_class: int | None = None, batch_size: int = 4096):
    """Scalar output used for attribution: the prediction (regression) or a class probability."""
    n_num = model.embedder.n_numerical

    def f(features: np.ndarray) -> np.ndarray:
        outs = []
        with no_grad():
            for start in range(0, len(features), batch_size):
                block = features[start:start + batch_size]
                num = block[:, :n_num]
                cat = np.rint(block[:, n_num:]).astype(np.int64)
                outs.append(model(num, cat).data)
        out = np.concatenate(outs, axis=0)
        if model.task == "regression":
            return out[:, 0]
        z = out - out.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        cls = 1 if target_class is None and model.n_outputs == 2 else (target_class or 0)
        return prob[:, cls]

    return f


def shapley_background(ds: PreparedDataset) -> np.ndarray:
    """Training mean for numericals (0 after z-scoring) and the missing code 0 for categoricals."""
    return np.zeros(ds.numerical.shape[1] + ds.categorical.shape[1])


def exact_shapley_importance(model, ds: PreparedDataset, background: np.ndarray | None = None,
                             target_class: int | None = None) -> np.ndarray:
    """Mean absolute exact Shapley value per feature over the rows of ``ds``."""
    m = model.n_features
    if m > 10:
        raise ContractViolation(f"{m} features is too many for exact Shapley values (max 10); subsample features")
    bg = shapley_background(ds) if background is None else background
    phi = exact_shapley_values(model_output_fn(model, target_class), ds.features(), bg)
    return np.abs(phi).mean(axis=0)


# -- embedding export -------------------------------------------------------------------


def export_embedding_points(model, ds: PreparedDataset, path=None) -> list[dict]:
    """Columnar points and last-layer feature-to-CLS message points for an l=2 model."""
    if model.config.latent != 2:
        raise ContractViolation(
            f"embedding export needs latent size 2 (got {model.config.latent}); retrain with l=2"
        )
    if model.encoder is None or model.encoder.kind != "in":
        raise UnsupportedOperation("embedding export needs an interaction-network encoder")
    m = model.n_features
    graph = build_graph(m)
    to_cls = [graph.edge_index(j, m) for j in range(m)]
    names = ds.schema.feature_names
    labels = value_labels(ds)
    rows = []
    with no_grad():
        columnar = model.embedder(ds.numerical, ds.categorical).data
        _, out = model.encode(ds.numerical, ds.categorical)
        messages = out.messages.data[:, to_cls, :]
    for i in range(ds.n_rows):
        for j in range(m):
            value = labels[j][i].split("=", 1)[1] if j >= ds.numerical.shape[1] else repr(float(ds.numerical[i, j]))
            for kind, pts in (("columnar", columnar), ("contextual", messages)):
                rows.append({"row": i, "feature": names[j], "value": value, "kind": kind,
                             "x": float(pts[i, j, 0]), "y": float(pts[i, j, 1])})
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["row", "feature", "value", "kind", "x", "y"])
            w.writeheader()
            for r in rows:
                w.writerow({**r, "x": repr(r["x"]), "y": repr(r["y"])})
    return rows


# -- end-to-end -------------------------------------------------------------------------


@dataclass
class InterpretationResult:
    summary: InteractionSummary
    population: PopulationStats
    shapley: np.ndarray
    rho: float
    p_value: float
    records: EdgeRecords

    def to_dict(self) -> dict:
        return {
            "features": self.summary.feature_names,
            "feature_scores": [float(v) for v in self.summary.feature_scores],
            "shapley_importance": [float(v) for v in self.shapley],
            "spearman_rho": self.rho,
            "spearman_p": self.p_value,
            "n_records": len(self.records),
            "mean_d2": float(np.mean(self.records.d2)),
            "latent": self.population.latent,
        }


def interpret(model, test_ds: PreparedDataset, out_dir=None, include_cls_in_population: bool = False) -> InterpretationResult:
    """Run the whole interaction analysis and compare with exact Shapley importance.

    Feature scores are p-values (low = important), so the Spearman correlation
    is taken between ``1 - p(j)`` and the Shapley importance.
    """
    all_records = collect_edge_vectors(model, test_ds, include_cls=True)
    ff = all_records.select(~all_records.is_cls_edge())
    population = fit_population_stats(all_records if include_cls_in_population else ff)
    score_records(ff, population)
    summary = aggregate_interactions(ff, test_ds.n_rows, test_ds.schema.feature_names, value_labels(test_ds))
    shap = exact_shapley_importance(model, test_ds)
    rho, p = spearman_rank(1.0 - summary.feature_scores, shap)
    result = InterpretationResult(summary, population, shap, rho, p, ff)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary.feature_heatmap().to_csv(out / "heatmap_features.csv")
        if summary.value_heatmap is not None:
            summary.value_heatmap.to_csv(out / "heatmap_values.csv")
        (out / "summary.json").write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
        cls_records = all_records.select(all_records.is_cls_edge())
        _write_edge_csv(cls_records, out / "cls_edges.csv")
    return result


def _write_edge_csv(records: EdgeRecords, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "source", "destination"] + [f"e{k}" for k in range(records.latent)])
        for k in range(len(records)):
            w.writerow([int(records.rows[k]), int(records.src[k]), int(records.dst[k])]
                       + [repr(float(v)) for v in records.vectors[k]])
