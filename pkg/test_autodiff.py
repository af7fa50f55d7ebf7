#!/usr/bin/env python3
"""
自動微分エンジンのテスト（順伝播の値・勾配チェック・エラー）
"""

import numpy as np
import pytest
from scipy.special import logsumexp

from autodiff import ops
from autodiff.gradcheck import grad_check
from autodiff.graph import Graph, Tape, backward, forward
from autodiff.ops import cross_entropy
from core.exceptions import ConfigurationError, GraphStateError, ShapeError
from core.model_factory import ModelFactory, init_model
from models.transformer_model import causal_mask
from conftest import tiny_spec


def unary_graph(op, shape):
    return Graph(lambda tape, n: op(n["x"]), {"x": shape})


class TestForward:
    def test_softmax_of_zeros(self):
        out = forward(unary_graph(ops.softmax, (1, 3)), {"x": np.zeros((1, 3))})
        np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], rtol=0, atol=1e-15)

    def test_log_softmax_normalized(self, rng):
        out = forward(unary_graph(ops.log_softmax, (4, 7)), {"x": 30 * rng.standard_normal((4, 7))})
        np.testing.assert_allclose(logsumexp(out, axis=1), 0.0, atol=1e-9)

    def test_matmul_matches_naive(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        graph = Graph(lambda tape, n: ops.matmul(n["a"], n["b"]), {"a": (3, 4), "b": (4, 2)})
        out = forward(graph, {"a": a, "b": b})
        naive = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    naive[i, j] += a[i, k] * b[k, j]
        assert out.shape == (3, 2)
        np.testing.assert_allclose(out, naive, rtol=1e-12)

    def test_deterministic(self, rng):
        x = rng.standard_normal((5, 5))
        graph = unary_graph(ops.softmax, (5, 5))
        first = forward(graph, {"x": x}).copy()
        assert np.array_equal(first, forward(graph, {"x": x}))

    def test_masked_softmax(self, rng):
        mask = causal_mask(5)
        graph = Graph(lambda tape, n: ops.softmax(ops.masked_fill(n["x"], mask)), {"x": (5, 5)})
        out = forward(graph, {"x": rng.standard_normal((5, 5))})
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out[mask] == 0.0)


class TestBackward:
    def test_identity_gradient_is_upstream(self, rng):
        graph = Graph(lambda tape, n: ops.scale(n["x"], 1.0), {"x": (2, 3)})
        forward(graph, {"x": rng.standard_normal((2, 3))})
        upstream = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(backward(graph, upstream)["x"], upstream)

    def test_square(self):
        graph = Graph(lambda tape, n: ops.mul(n["x"], n["x"]), {"x": (1, 1)})
        forward(graph, {"x": np.array([[3.0]])})
        assert backward(graph)["x"][0, 0] == pytest.approx(6.0)

    def test_fan_out_accumulates(self, rng):
        graph = Graph(lambda tape, n: ops.add(ops.tanh(n["x"]), ops.sigmoid(n["x"])), {"x": (2, 2)})
        x = rng.standard_normal((2, 2))
        forward(graph, {"x": x})
        s = 1 / (1 + np.exp(-x))
        np.testing.assert_allclose(backward(graph)["x"], (1 - np.tanh(x) ** 2) + s * (1 - s), rtol=1e-12)

    def test_embedding_scatter_adds_repeated_rows(self, rng):
        weight = rng.standard_normal((4, 3))
        ids = np.array([1, 1, 0, 1])
        graph = Graph(lambda tape, n: ops.embedding(n["w"], ids), {"w": (4, 3)})
        forward(graph, {"w": weight})
        upstream = rng.standard_normal((4, 3))
        grad = backward(graph, upstream)["w"]
        np.testing.assert_allclose(grad[1], upstream[[0, 1, 3]].sum(axis=0), rtol=1e-12)
        np.testing.assert_allclose(grad[0], upstream[2])
        assert np.all(grad[2:] == 0.0)

    def test_backward_before_forward(self):
        with pytest.raises(GraphStateError):
            unary_graph(ops.tanh, (2, 2)).backward()


class TestGradCheck:
    def test_linear_layer(self, rng):
        graph = Graph(lambda tape, n: ops.add_bias(ops.matmul(n["x"], n["w"]), n["b"]),
                      {"x": (3, 4), "w": (4, 2), "b": (2,)})
        point = {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((4, 2)), "b": rng.standard_normal(2)}
        assert grad_check(graph, point) < 1e-7

    def test_masked_softmax(self, rng):
        mask = causal_mask(4)
        graph = Graph(lambda tape, n: ops.softmax(ops.masked_fill(n["x"], mask)), {"x": (4, 4)})
        assert grad_check(graph, {"x": rng.standard_normal((4, 4))}) < 1e-6

    def test_layer_norm(self, rng):
        graph = Graph(lambda tape, n: ops.layer_norm(n["x"], n["g"], n["b"]), {"x": (3, 5), "g": (5,), "b": (5,)})
        point = {"x": rng.standard_normal((3, 5)), "g": 1 + 0.1 * rng.standard_normal(5),
                 "b": rng.standard_normal(5)}
        assert grad_check(graph, point) < 1e-6

    @pytest.mark.parametrize("op", [ops.sigmoid, ops.tanh, ops.softmax, ops.log_softmax, ops.transpose],
                             ids=lambda op: op.__name__)
    def test_unary_primitives(self, op):
        for seed in range(10):
            x = np.random.default_rng(seed).standard_normal((3, 4))
            assert grad_check(unary_graph(op, (3, 4)), {"x": x}, seed=seed) < 1e-5

    def test_relu_away_from_kink(self, rng):
        x = rng.standard_normal((3, 4))
        x = np.where(np.abs(x) < 0.1, 0.5, x)
        assert grad_check(unary_graph(ops.relu, (3, 4)), {"x": x}) < 1e-5

    def test_binary_primitives(self, rng):
        graph = Graph(lambda tape, n: ops.concat([ops.mul(n["a"], n["b"]), ops.sub(n["a"], n["b"])], axis=1),
                      {"a": (2, 3), "b": (2, 3)})
        point = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 3))}
        assert grad_check(graph, point) < 1e-5

    def test_cross_entropy_with_mask(self, rng):
        targets = np.array([0, 2, 1, 3])
        mask = np.array([True, True, False, True])
        graph = Graph(lambda tape, n: cross_entropy(ops.log_softmax(n["x"]), targets, mask), {"x": (4, 4)})
        assert grad_check(graph, {"x": rng.standard_normal((4, 4))}) < 1e-5

    def test_step_out_of_range(self, rng):
        with pytest.raises(ConfigurationError):
            grad_check(unary_graph(ops.tanh, (1, 1)), {"x": np.ones((1, 1))}, h=1e-2)


@pytest.mark.parametrize("kind,layers", [("gru", 1), ("gru", 2), ("transformer", 1)])
def test_language_model_loss_gradient(kind, layers):
    """LM全体の損失の勾配を中心差分と比較（V=20, T=5）"""
    spec = tiny_spec(kind, layers=layers, vocab_size=20)
    checkpoint = init_model(spec, seed=3)
    model = ModelFactory.create(checkpoint)
    token_ids = np.array([[0, 5, 9, 4, 7, 1], [0, 12, 3, 1, 1, 1]])
    pad = np.array([[False] * 6, [False, False, False, False, True, True]])
    targets = token_ids[:, 1:].reshape(-1)
    mask = ~pad[:, 1:].reshape(-1)

    def build(tape, nodes):
        return cross_entropy(model.batch_log_probs(nodes, token_ids[:, :-1]), targets, mask)

    graph = Graph(build)
    point = {name: value.copy() for name, value in checkpoint.tensors.items()}
    forward(graph, point)
    analytic = backward(graph)

    rng = np.random.default_rng(0)
    h = 1e-6
    for name, value in point.items():
        flat = value.reshape(-1)
        for i in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            original = flat[i]
            flat[i] = original + h
            f_plus = float(forward(graph, point))
            flat[i] = original - h
            f_minus = float(forward(graph, point))
            flat[i] = original
            numeric = (f_plus - f_minus) / (2 * h)
            assert analytic[name].reshape(-1)[i] == pytest.approx(numeric, rel=1e-5, abs=1e-8), name


class TestShapeErrors:
    def test_matmul_mismatch(self):
        tape = Tape()
        with pytest.raises(ShapeError) as info:
            ops.matmul(tape.leaf("a", np.zeros((3, 4))), tape.leaf("b", np.zeros((3, 2))))
        assert info.value.details["op"] == "matmul"
        assert [tuple(s) for s in info.value.details["shapes"]] == [(3, 4), (3, 2)]

    def test_declared_input_shape(self):
        with pytest.raises(ShapeError):
            forward(unary_graph(ops.tanh, (2, 2)), {"x": np.zeros((3, 2))})

    def test_upstream_shape(self):
        graph = unary_graph(ops.tanh, (2, 2))
        forward(graph, {"x": np.zeros((2, 2))})
        with pytest.raises(ShapeError):
            backward(graph, np.ones((2, 3)))

    def test_add_does_not_broadcast(self):
        tape = Tape()
        with pytest.raises(ShapeError):
            ops.add(tape.leaf("a", np.zeros((2, 3))), tape.leaf("b", np.zeros((1, 3))))
