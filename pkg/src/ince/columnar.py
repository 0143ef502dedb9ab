"""Context-free projection of every feature into the shared latent space."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, mul, parameter, relu, stack, take
from .errors import ContractViolation
from .layers import Module


class ColumnarEmbedder(Module):
    """Per-feature embeddings.

    Numerical feature ``j`` maps a scalar ``x`` to ``relu(b_j + x * w_j)``;
    categorical feature ``j`` maps code ``k`` to ``b_j + table_j[k]`` with no
    activation.  Row ``j`` of ``num_weight``/``num_bias`` belongs to numerical
    feature ``j`` alone, and each categorical feature owns its own table.
    """

    def __init__(self, n_numerical: int, cardinalities: list[int], latent: int, rng: np.random.Generator):
        if n_numerical + len(cardinalities) < 1:
            raise ContractViolation("need at least one feature")
        self.latent = latent
        self.n_numerical = n_numerical
        self.cardinalities = list(cardinalities)
        bound = 1.0 / np.sqrt(latent)
        self.num_weight = parameter(rng.uniform(-bound, bound, size=(n_numerical, latent)))
        self.num_bias = parameter(np.zeros((n_numerical, latent)))
        self.cat_tables = [parameter(rng.uniform(-bound, bound, size=(c, latent))) for c in cardinalities]
        self.cat_biases = [parameter(np.zeros(latent)) for _ in cardinalities]

    @property
    def n_features(self) -> int:
        return self.n_numerical + len(self.cardinalities)

    def __call__(self, numerical, categorical) -> Tensor:
        return self.embed_batch(numerical, categorical)

    def embed_batch(self, numerical, categorical) -> Tensor:
        """(B, M_num) floats and (B, M_cat) codes -> (B, M, l) embeddings."""
        numerical = np.asarray(numerical, dtype=np.float64)
        categorical = np.asarray(categorical, dtype=np.int64)
        if numerical.ndim != 2 or numerical.shape[1] != self.n_numerical:
            raise ContractViolation(
                f"expected numerical block (B, {self.n_numerical}), got {numerical.shape}"
            )
        n_cat = len(self.cardinalities)
        if categorical.ndim != 2 or categorical.shape[1] != n_cat:
            raise ContractViolation(f"expected categorical block (B, {n_cat}), got {categorical.shape}")
        if numerical.shape[0] != categorical.shape[0]:
            raise ContractViolation("numerical and categorical blocks differ in row count")
        parts = []
        if self.n_numerical:
            x = Tensor(numerical[:, :, None])
            parts.append(relu(mul(x, self.num_weight) + self.num_bias))
        if n_cat:
            for j, card in enumerate(self.cardinalities):
                codes = categorical[:, j]
                if codes.size and (codes.min() < 0 or codes.max() >= card):
                    raise ContractViolation(
                        f"categorical feature {j}: code outside [0, {card})"
                    )
            rows = [
                take(table, categorical[:, j], axis=0) + bias
                for j, (table, bias) in enumerate(zip(self.cat_tables, self.cat_biases))
            ]
            parts.append(stack(rows, axis=1))
        return parts[0] if len(parts) == 1 else concat(parts, axis=1)

    def embed_row(self, numerical, categorical) -> Tensor:
        """Single row version: returns (M, l)."""
        out = self.embed_batch(np.asarray(numerical, dtype=np.float64)[None, :],
                               np.asarray(categorical, dtype=np.int64)[None, :])
        return out[0]

    def permuted(self, num_perm, cat_perm) -> "ColumnarEmbedder":
        """Copy with features reordered (within the numerical and categorical blocks)."""
        clone = object.__new__(ColumnarEmbedder)
        clone.latent = self.latent
        clone.n_numerical = self.n_numerical
        clone.cardinalities = [self.cardinalities[i] for i in cat_perm]
        clone.num_weight = parameter(self.num_weight.data[list(num_perm)].copy())
        clone.num_bias = parameter(self.num_bias.data[list(num_perm)].copy())
        clone.cat_tables = [parameter(self.cat_tables[i].data.copy()) for i in cat_perm]
        clone.cat_biases = [parameter(self.cat_biases[i].data.copy()) for i in cat_perm]
        return clone


def embed_row(numerical, categorical, embedder: ColumnarEmbedder) -> Tensor:
    return embedder.embed_row(numerical, categorical)


def embed_batch(numerical, categorical, embedder: ColumnarEmbedder) -> Tensor:
    return embedder.embed_batch(numerical, categorical)
