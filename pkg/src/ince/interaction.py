"""Interaction Network encoder over the complete feature graph plus CLS node."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, concat, expand, matmul, parameter, reshape, take
from .errors import ContractViolation
from .layers import MLP, Module


@dataclass(frozen=True)
class FeatureGraph:
    """Complete directed graph on ``M`` feature nodes plus CLS (index ``M``).

    Edges are every ordered pair ``(src, dst)`` with ``src != dst``, sorted by
    source then destination.
    """

    n_features: int
    src: np.ndarray
    dst: np.ndarray
    incidence: np.ndarray  # (V, E), incidence[v, k] = 1 iff dst[k] == v

    @property
    def n_nodes(self) -> int:
        return self.n_features + 1

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def cls_index(self) -> int:
        return self.n_features

    def edge_index(self, src: int, dst: int) -> int:
        hits = np.flatnonzero((self.src == src) & (self.dst == dst))
        if not hits.size:
            raise KeyError((src, dst))
        return int(hits[0])

    def feature_edge_mask(self) -> np.ndarray:
        """True for edges between two feature nodes (CLS-incident edges excluded)."""
        return (self.src != self.cls_index) & (self.dst != self.cls_index)


@lru_cache(maxsize=64)
def build_graph(n_features: int) -> FeatureGraph:
    if n_features < 1:
        raise ContractViolation("the feature graph needs at least one feature")
    v = n_features + 1
    pairs = [(s, d) for s in range(v) for d in range(v) if s != d]
    src = np.array([p[0] for p in pairs], dtype=np.intp)
    dst = np.array([p[1] for p in pairs], dtype=np.intp)
    inc = np.zeros((v, len(pairs)))
    inc[dst, np.arange(len(pairs))] = 1.0
    for arr in (src, dst, inc):
        arr.setflags(write=False)
    return FeatureGraph(n_features, src, dst, inc)


@dataclass
class LayerOutput:
    nodes: Tensor  # (B, V, l) after the residual
    edges: Tensor  # (B, E, l) after the residual
    messages: Tensor  # (B, E, l) raw edge-MLP output of this layer


class InteractionLayer(Module):
    """One message-passing step: edge MLP, sum aggregation, node MLP, residuals.

    ``depth`` is the number of linear layers in each MLP; the edge MLP reads
    ``[n_src, n_dst]`` on the first layer of a stack and ``[n_src, n_dst, e]``
    afterwards.
    """

    def __init__(self, latent: int, depth: int, first: bool, rng: np.random.Generator):
        if depth < 1:
            raise ContractViolation("MLP depth must be >= 1")
        self.latent = latent
        self.depth = depth
        self.first = first
        k = 2 if first else 3
        self.edge_mlp = MLP([k * latent] + [latent] * depth, rng)
        self.node_mlp = MLP([2 * latent] + [latent] * depth, rng)

    def __call__(self, nodes: Tensor, edges: Tensor | None, graph: FeatureGraph) -> LayerOutput:
        if nodes.ndim != 3 or nodes.shape[1] != graph.n_nodes or nodes.shape[2] != self.latent:
            raise ContractViolation(
                f"node states must be (B, {graph.n_nodes}, {self.latent}), got {nodes.shape}"
            )
        if self.first != (edges is None):
            raise ContractViolation("edge states must be absent exactly on the first layer")
        if edges is not None and edges.shape != (nodes.shape[0], graph.n_edges, self.latent):
            raise ContractViolation(f"edge states have shape {edges.shape}")
        parts = [take(nodes, graph.src, axis=1), take(nodes, graph.dst, axis=1)]
        if edges is not None:
            parts.append(edges)
        messages = self.edge_mlp(concat(parts, axis=-1))
        incoming = matmul(Tensor(graph.incidence), messages)
        node_update = self.node_mlp(concat([nodes, incoming], axis=-1))
        new_edges = messages if edges is None else edges + messages
        return LayerOutput(nodes + node_update, new_edges, messages)


@dataclass
class ContextualOutput:
    cls: Tensor  # (B, l)
    nodes: Tensor  # (B, V, l)
    edges: Tensor  # (B, E, l)
    messages: Tensor  # (B, E, l) of the last layer
    graph: FeatureGraph


class InteractionEncoder(Module):
    """CLS parameter plus ``n_layers`` stacked interaction layers."""

    kind = "in"

    def __init__(self, latent: int, depth: int, n_layers: int, rng: np.random.Generator):
        if n_layers < 1:
            raise ContractViolation("need at least one stacked layer")
        self.latent = latent
        self.cls = parameter(rng.normal(0.0, 0.02, size=latent))
        self.layers = [InteractionLayer(latent, depth, i == 0, rng) for i in range(n_layers)]

    def initial_nodes(self, columnar: Tensor) -> Tensor:
        b = columnar.shape[0]
        cls = expand(reshape(self.cls, (1, 1, self.latent)), (b, 1, self.latent))
        return concat([columnar, cls], axis=1)

    def __call__(self, columnar: Tensor) -> ContextualOutput:
        if columnar.ndim != 3 or columnar.shape[2] != self.latent:
            raise ContractViolation(f"columnar batch must be (B, M, {self.latent})")
        graph = build_graph(columnar.shape[1])
        nodes, edges = self.initial_nodes(columnar), None
        out = None
        for layer in self.layers:
            out = layer(nodes, edges, graph)
            nodes, edges = out.nodes, out.edges
        return ContextualOutput(nodes[:, graph.cls_index, :], nodes, edges, out.messages, graph)


def in_layer_forward(nodes: Tensor, edges: Tensor | None, layer: InteractionLayer) -> tuple[Tensor, Tensor]:
    graph = build_graph(nodes.shape[1] - 1)
    out = layer(nodes, edges, graph)
    return out.nodes, out.edges


def contextual_forward(columnar: Tensor, encoder: InteractionEncoder) -> tuple[Tensor, Tensor, Tensor]:
    out = encoder(columnar)
    return out.cls, out.edges, out.nodes
