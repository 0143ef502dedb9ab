import math

import numpy as np
import pytest

from ince.autodiff import Tensor, finite_diff_check, forward_backward, parameter, sum_
from ince.columnar import ColumnarEmbedder
from ince.errors import ContractViolation
from ince.interaction import FeatureGraph, InteractionEncoder, InteractionLayer, build_graph
from ince.transformer import TransformerEncoder, TransformerLayer


def _zero(module):
    for p in module.parameters().values():
        p.data[...] = 0.0


def _columnar_input(rng, b, m, l):
    return Tensor(rng.normal(size=(b, m, l)))


class TestColumnar:
    def test_numerical_at_zero_is_relu_bias(self):
        emb = ColumnarEmbedder(2, [], 3, np.random.default_rng(0))
        emb.num_bias.data[:] = [[1.0, -1.0, 0.5], [-2.0, 3.0, 0.0]]
        out = emb.embed_row([0.0, 0.0], []).data
        np.testing.assert_array_equal(out, [[1.0, 0.0, 0.5], [0.0, 3.0, 0.0]])

    def test_numerical_hand_value(self):
        emb = ColumnarEmbedder(1, [], 2, np.random.default_rng(0))
        emb.num_weight.data[:] = 1.0
        np.testing.assert_array_equal(emb.embed_row([2.0], []).data, [[2.0, 2.0]])

    def test_categorical_is_bias_plus_row(self):
        emb = ColumnarEmbedder(0, [4], 3, np.random.default_rng(1))
        emb.cat_biases[0].data[:] = [0.5, -7.0, 1.0]
        out = emb.embed_row([], [2]).data[0]
        np.testing.assert_array_equal(out, emb.cat_tables[0].data[2] + emb.cat_biases[0].data)
        assert out[1] < 0  # no activation on categorical embeddings

    def test_out_of_range_code(self):
        emb = ColumnarEmbedder(1, [3], 2, np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            emb.embed_row([0.0], [3])

    def test_context_free(self):
        rng = np.random.default_rng(2)
        emb = ColumnarEmbedder(2, [3, 5], 4, rng)
        num = rng.normal(size=(6, 2))
        cat = rng.integers(0, 3, size=(6, 2))
        base = emb(num, cat).data
        num2 = num.copy()
        num2[:, 0] += 1.7
        cat2 = cat.copy()
        cat2[:, 1] = (cat2[:, 1] + 1) % 5
        changed = emb(num2, cat2).data
        np.testing.assert_array_equal(base[:, [1, 2]], changed[:, [1, 2]])
        assert np.all(base[:, :2] >= 0.0)

    def test_duplicate_rows(self):
        rng = np.random.default_rng(3)
        emb = ColumnarEmbedder(1, [3], 4, rng)
        out = emb(np.array([[0.3], [0.3]]), np.array([[2], [2]])).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_gradient(self):
        rng = np.random.default_rng(4)
        emb = ColumnarEmbedder(3, [3, 2, 4], 3, rng)
        num = rng.normal(size=(2, 3))
        cat = np.array([[1, 0, 3], [2, 1, 0]])
        w = rng.normal(size=(2, 6, 3))
        report = finite_diff_check(lambda: sum_(emb(num, cat) * w), emb.parameters())
        assert report.passed, report.failures()


class TestGraph:
    def test_counts(self):
        g = build_graph(3)
        assert (g.n_nodes, g.n_edges) == (4, 12)
        g8 = build_graph(8)
        assert (g8.n_nodes, g8.n_edges) == (9, 72)

    def test_single_feature(self):
        g = build_graph(1)
        assert list(zip(g.src, g.dst)) == [(0, 1), (1, 0)]

    def test_no_features(self):
        with pytest.raises(ContractViolation):
            build_graph(0)


def _permute_state(nodes, edges, perm, graph):
    """New node i is old node perm[i]; edges follow their endpoints."""
    new_nodes = nodes[:, perm, :]
    idx = [graph.edge_index(perm[s], perm[d]) for s, d in zip(graph.src, graph.dst)]
    return new_nodes, edges[:, idx, :]


class TestInteractionLayer:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(0)
        g = build_graph(3)
        layer = InteractionLayer(4, 2, first=False, rng=rng)
        _zero(layer)
        nodes = Tensor(rng.normal(size=(2, 4, 4)))
        edges = Tensor(rng.normal(size=(2, 12, 4)))
        out = layer(nodes, edges, g)
        np.testing.assert_array_equal(out.nodes.data, nodes.data)
        np.testing.assert_array_equal(out.edges.data, edges.data)

    def test_first_layer_edges_are_messages(self):
        rng = np.random.default_rng(1)
        g = build_graph(2)
        layer = InteractionLayer(3, 1, first=True, rng=rng)
        out = layer(Tensor(rng.normal(size=(1, 3, 3))), None, g)
        np.testing.assert_array_equal(out.edges.data, out.messages.data)

    def test_one_neighbour_sum(self):
        rng = np.random.default_rng(2)
        g = build_graph(1)
        layer = InteractionLayer(2, 1, first=True, rng=rng)
        nodes = Tensor(rng.normal(size=(1, 2, 2)))
        out = layer(nodes, None, g)
        msg_1_to_0 = out.messages.data[0, g.edge_index(1, 0)]
        w, b = layer.node_mlp.layers[0].weight.data, layer.node_mlp.layers[0].bias.data
        expected = nodes.data[0, 0] + np.concatenate([nodes.data[0, 0], msg_1_to_0]) @ w + b
        np.testing.assert_allclose(out.nodes.data[0, 0], expected, rtol=0, atol=1e-14)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        m, l = 4, 3
        g = build_graph(m)
        layer = InteractionLayer(l, 2, first=False, rng=rng)
        nodes = rng.normal(size=(2, m + 1, l))
        edges = rng.normal(size=(2, g.n_edges, l))
        perm = np.append(rng.permutation(m), m)
        base = layer(Tensor(nodes), Tensor(edges), g)
        pn, pe = _permute_state(nodes, edges, perm, g)
        moved = layer(Tensor(pn), Tensor(pe), g)
        np.testing.assert_allclose(moved.nodes.data, base.nodes.data[:, perm], rtol=0, atol=1e-12)
        np.testing.assert_allclose(moved.nodes.data[:, m], base.nodes.data[:, m], rtol=0, atol=1e-12)

    def test_sum_not_mean(self):
        """Swapping the sum for a mean must change the result once a node has 2+ neighbours."""
        rng = np.random.default_rng(4)
        g = build_graph(2)
        layer = InteractionLayer(3, 2, first=True, rng=rng)
        nodes = Tensor(rng.normal(size=(1, 3, 3)))
        summed = layer(nodes, None, g).nodes.data
        mean_inc = g.incidence / g.incidence.sum(axis=1, keepdims=True)
        g_mean = FeatureGraph(g.n_features, g.src, g.dst, mean_inc)
        averaged = layer(nodes, None, g_mean).nodes.data
        assert np.abs(summed - averaged).max() > 1e-6
        # the sum matches the explicit per-node loop
        msgs = layer(nodes, None, g).messages.data[0]
        for v in range(3):
            agg = msgs[g.dst == v].sum(axis=0)
            w = [layer.node_mlp.layers[i] for i in range(2)]
            h = np.maximum(np.concatenate([nodes.data[0, v], agg]) @ w[0].weight.data + w[0].bias.data, 0)
            expected = nodes.data[0, v] + h @ w[1].weight.data + w[1].bias.data
            np.testing.assert_allclose(summed[0, v], expected, atol=1e-13)

    def test_shape_errors(self):
        rng = np.random.default_rng(5)
        g = build_graph(2)
        layer = InteractionLayer(3, 1, first=False, rng=rng)
        with pytest.raises(ContractViolation):
            layer(Tensor(np.zeros((1, 3, 3))), None, g)
        with pytest.raises(ContractViolation):
            layer(Tensor(np.zeros((1, 4, 3))), Tensor(np.zeros((1, 6, 3))), g)


class TestInteractionEncoder:
    def test_zero_stack_returns_cls(self):
        rng = np.random.default_rng(0)
        enc = InteractionEncoder(4, 3, 3, rng)
        for layer in enc.layers:
            _zero(layer)
        out = enc(_columnar_input(rng, 5, 3, 4))
        np.testing.assert_array_equal(out.cls.data, np.tile(enc.cls.data, (5, 1)))

    def test_cls_permutation_invariance(self):
        rng = np.random.default_rng(1)
        enc = InteractionEncoder(4, 2, 2, rng)
        x = rng.normal(size=(3, 5, 4))
        base = enc(Tensor(x)).cls.data
        for _ in range(10):
            perm = rng.permutation(5)
            np.testing.assert_allclose(enc(Tensor(x[:, perm])).cls.data, base, rtol=0, atol=1e-12)

    def test_cross_feature_jacobian(self):
        rng = np.random.default_rng(2)
        # wide enough that no edge MLP is entirely relu-dead for one input
        enc = InteractionEncoder(8, 2, 2, rng)
        x = parameter(rng.normal(size=(1, 4, 8)))
        for k in range(4):
            out = enc(x)
            g = forward_backward(sum_(out.nodes[:, k, :]), {"x": x})["x"]
            for j in range(4):
                if j != k:
                    assert np.abs(g[0, j]).max() > 0.0

    def test_gradient_two_layers(self):
        rng = np.random.default_rng(3)
        enc = InteractionEncoder(4, 2, 2, rng)
        x = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(2, 4))
        report = finite_diff_check(lambda: sum_(enc(Tensor(x)).cls * w), enc.parameters())
        assert report.passed, report.failures()
        assert sum(e.checked for e in report.entries) > 0.9 * sum(
            e.checked + e.skipped for e in report.entries)


class TestTransformer:
    def test_hand_example(self):
        """l=1, one head, Q=K=V=1, identity output projection, feed-forward zeroed."""
        layer = TransformerLayer(1, 1, 4, np.random.default_rng(0))
        _zero(layer)
        for w in (layer.query, layer.key, layer.value):
            w.data[...] = 1.0
        layer.out.weight.data[...] = 1.0
        out = layer(Tensor([[[0.0], [1.0]]]))
        # node 0 scores [0, 0] -> weights [1/2, 1/2]; node 1 scores [0, 1] -> [1/(1+e), e/(1+e)]
        e = math.e
        np.testing.assert_allclose(out.weights[0, 0], [[0.5, 0.5], [1 / (1 + e), e / (1 + e)]], atol=1e-15)
        np.testing.assert_allclose(out.nodes.data[0, :, 0], [0.5, 1.0 + e / (1 + e)], atol=1e-15)

    def test_uniform_attention(self):
        rng = np.random.default_rng(1)
        layer = TransformerLayer(3, 2, 8, rng)
        nodes = np.tile(rng.normal(size=3), (1, 5, 1))
        w = layer(Tensor(nodes)).weights
        np.testing.assert_allclose(w, 1 / 5, atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        layer = TransformerLayer(4, 3, 8, rng)
        w = layer(Tensor(rng.normal(size=(2, 6, 4)) * 3)).weights
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_zero_stack_returns_cls(self):
        rng = np.random.default_rng(3)
        enc = TransformerEncoder(4, 2, 8, 2, rng)
        for layer in enc.layers:
            _zero(layer)
        out = enc(_columnar_input(rng, 3, 4, 4))
        np.testing.assert_array_equal(out.cls.data, np.tile(enc.cls.data, (3, 1)))

    def test_cls_permutation_invariance(self):
        rng = np.random.default_rng(4)
        enc = TransformerEncoder(4, 2, 16, 2, rng)
        x = rng.normal(size=(2, 5, 4))
        base = enc(Tensor(x)).cls.data
        for _ in range(10):
            perm = rng.permutation(5)
            np.testing.assert_allclose(enc(Tensor(x[:, perm])).cls.data, base, rtol=0, atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        enc = TransformerEncoder(4, 2, 6, 1, rng)
        x = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(2, 4))
        report = finite_diff_check(lambda: sum_(enc(Tensor(x)).cls * w), enc.parameters())
        assert report.passed, report.failures()

    def test_shape_error(self):
        layer = TransformerLayer(3, 1, 4, np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            layer(Tensor(np.zeros((2, 3, 2))))
