"""Transformer-encoder alternative to the interaction-network stack.

Residual-only layers (no normalization): multi-head self-attention with
per-head ``l x l`` query/key/value projections, an ``h*l -> l`` output
projection, and a relu feed-forward block ``l -> f -> l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, expand, matmul, parameter, relu, reshape, softmax, transpose
from .errors import ContractViolation
from .layers import Linear, Module, uniform_init


@dataclass
class AttentionOutput:
    nodes: Tensor  # (B, V, l)
    weights: np.ndarray  # (B, h, V, V) attention weights


class TransformerLayer(Module):
    def __init__(self, latent: int, heads: int, ff: int, rng: np.random.Generator):
        if heads < 1 or ff < 1:
            raise ContractViolation("heads and feed-forward size must be >= 1")
        self.latent = latent
        self.heads = heads
        self.ff = ff
        shape = (heads, latent, latent)
        self.query = parameter(uniform_init(rng, shape, latent))
        self.query_bias = parameter(uniform_init(rng, (heads, 1, latent), latent))
        self.key = parameter(uniform_init(rng, shape, latent))
        self.key_bias = parameter(uniform_init(rng, (heads, 1, latent), latent))
        self.value = parameter(uniform_init(rng, shape, latent))
        self.value_bias = parameter(uniform_init(rng, (heads, 1, latent), latent))
        self.out = Linear(heads * latent, latent, rng)
        self.ff_in = Linear(latent, ff, rng)
        self.ff_out = Linear(ff, latent, rng)

    def __call__(self, nodes: Tensor) -> AttentionOutput:
        if nodes.ndim != 3 or nodes.shape[2] != self.latent:
            raise ContractViolation(f"node states must be (B, V, {self.latent}), got {nodes.shape}")
        b, v, l = nodes.shape
        x = reshape(nodes, (b, 1, v, l))
        q = matmul(x, self.query) + self.query_bias
        k = matmul(x, self.key) + self.key_bias
        val = matmul(x, self.value) + self.value_bias
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(l))
        weights = softmax(scores, axis=-1)
        heads = matmul(weights, val)  # (B, h, V, l)
        merged = reshape(transpose(heads, (0, 2, 1, 3)), (b, v, self.heads * l))
        x1 = nodes + self.out(merged)
        x2 = x1 + self.ff_out(relu(self.ff_in(x1)))
        return AttentionOutput(x2, weights.data)


@dataclass
class TransformerOutput:
    cls: Tensor
    nodes: Tensor
    attention: list


class TransformerEncoder(Module):
    kind = "transformer"

    def __init__(self, latent: int, heads: int, ff: int, n_layers: int, rng: np.random.Generator):
        if n_layers < 1:
            raise ContractViolation("need at least one stacked layer")
        self.latent = latent
        self.cls = parameter(rng.normal(0.0, 0.02, size=latent))
        self.layers = [TransformerLayer(latent, heads, ff, rng) for _ in range(n_layers)]

    def initial_nodes(self, columnar: Tensor) -> Tensor:
        b = columnar.shape[0]
        cls = expand(reshape(self.cls, (1, 1, self.latent)), (b, 1, self.latent))
        return concat([columnar, cls], axis=1)

    def __call__(self, columnar: Tensor) -> TransformerOutput:
        if columnar.ndim != 3 or columnar.shape[2] != self.latent:
            raise ContractViolation(f"columnar batch must be (B, M, {self.latent})")
        nodes = self.initial_nodes(columnar)
        maps = []
        for layer in self.layers:
            out = layer(nodes)
            nodes = out.nodes
            maps.append(out.weights)
        return TransformerOutput(nodes[:, columnar.shape[1], :], nodes, maps)


def attention_forward(nodes: Tensor, layer: TransformerLayer) -> Tensor:
    return layer(nodes).nodes


def transformer_contextual_forward(columnar: Tensor, encoder: TransformerEncoder) -> Tensor:
    return encoder(columnar).cls
