import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import lstm_oracle, matmul_oracle
from tftsales import tensor as T


def _weighted_sum(out: T.Tensor, seed: int = 99) -> T.Tensor:
    """Contract an output with fixed random weights so every output element matters."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return T.tsum(T.mul(out, T.Tensor(w)))


def _params(rng, **shapes):
    return {k: T.parameter(rng.normal(size=s), k) for k, s in shapes.items()}


# each case: (parameter shapes, builder returning the primitive's output)
PRIMITIVES = {
    "add_broadcast": ({"a": (3, 4), "b": (4,)}, lambda p: T.add(p["a"], p["b"])),
    "sub_broadcast": ({"a": (2, 1, 4), "b": (3, 4)}, lambda p: T.sub(p["a"], p["b"])),
    "mul_broadcast": ({"a": (3, 4), "b": (3, 1)}, lambda p: T.mul(p["a"], p["b"])),
    "matmul_2d": ({"a": (3, 5), "b": (5, 2)}, lambda p: T.matmul(p["a"], p["b"])),
    "matmul_batched": ({"a": (2, 3, 5), "b": (2, 5, 4)}, lambda p: T.matmul(p["a"], p["b"])),
    "matmul_batched_shared": ({"a": (2, 3, 5), "b": (5, 4)}, lambda p: T.matmul(p["a"], p["b"])),
    "linear": ({"x": (2, 3, 5), "w": (5, 4), "b": (4,)}, lambda p: T.linear(p["x"], p["w"], p["b"])),
    "concat": ({"a": (2, 3), "b": (2, 2)}, lambda p: T.concat([p["a"], p["b"]], axis=-1)),
    "stack": ({"a": (2, 3), "b": (2, 3)}, lambda p: T.stack([p["a"], p["b"]], axis=1)),
    "getitem": ({"a": (4, 5)}, lambda p: p["a"][1:3, ::2]),
    "reshape": ({"a": (2, 6)}, lambda p: T.reshape(p["a"], (3, 4))),
    "transpose": ({"a": (2, 3, 4)}, lambda p: T.transpose(p["a"], (0, 2, 1))),
    "sum_axis": ({"a": (3, 4)}, lambda p: T.tsum(p["a"], axis=0)),
    "mean_axis": ({"a": (3, 4)}, lambda p: T.tmean(p["a"], axis=-1)),
    "sigmoid": ({"a": (3, 4)}, lambda p: T.sigmoid(p["a"])),
    "tanh": ({"a": (3, 4)}, lambda p: T.tanh(p["a"])),
    "elu": ({"a": (3, 4)}, lambda p: T.elu(p["a"])),
    "softmax": ({"a": (2, 3, 5)}, lambda p: T.softmax(p["a"])),
    "softmax_masked": ({"a": (3, 5)}, lambda p: T.softmax(p["a"], np.tril(np.ones((3, 5), bool), 2))),
    "layer_norm": ({"x": (3, 6), "g": (6,), "b": (6,)}, lambda p: T.layer_norm(p["x"], p["g"], p["b"])),
    "embedding": ({"table": (5, 3)}, lambda p: T.embedding(p["table"], np.array([0, 3, 3, 1]))),
    "unfold_same": ({"x": (2, 6, 3)}, lambda p: T.unfold_same(p["x"], 4)),
    "dropout_fixed_mask": ({"a": (4, 5)},
                           lambda p: T.dropout(p["a"], 0.3, True, np.random.default_rng(5))),
    "lstm_scan": ({"x": (2, 4, 12), "h0": (2, 3), "c0": (2, 3), "w": (3, 12)},
                  lambda p: T.lstm_scan(p["x"], p["h0"], p["c0"], p["w"])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_backward_matches_central_differences(name):
    shapes, build = PRIMITIVES[name]
    with T.precision(np.float64):
        params = _params(np.random.default_rng(len(name)), **shapes)
        report = T.grad_check(lambda: _weighted_sum(build(params)), params, tol=1e-4)
    assert report.max_error < 1e-6
    assert report.groups() == set(params)


def test_relu_backward_away_from_kink():
    with T.precision(np.float64):
        x = np.random.default_rng(0).uniform(0.1, 1.0, (3, 4)) * np.where(np.arange(12) % 2, 1, -1).reshape(3, 4)
        params = {"a": T.parameter(x, "a")}
        report = T.grad_check(lambda: _weighted_sum(T.relu(params["a"])), params)
    assert report.max_error < 1e-8


def test_lstm_scan_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    x, h0, c0, w = rng.normal(size=(2, 7, 12)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(3, 12))
    got = T.lstm_scan(T.Tensor(x), T.Tensor(h0), T.Tensor(c0), T.Tensor(w)).data
    ref = np.array(lstm_oracle(x.tolist(), h0.tolist(), c0.tolist(), w.tolist()))
    assert np.max(np.abs(got - ref)) < 1e-12


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
    ref = np.array(matmul_oracle(a.tolist(), b.tolist()))
    np.testing.assert_allclose(T.matmul(T.Tensor(a), T.Tensor(b)).data, ref, rtol=1e-12, atol=1e-12)


def test_softmax_masked_entries_are_exact_zeros():
    mask = np.array([[True, False, True], [False, False, True]])
    s = T.softmax(T.Tensor(np.array([[1.0, 50.0, 2.0], [3.0, 4.0, -1.0]])), mask).data
    assert s[0, 1] == 0.0 and s[1, 0] == 0.0 and s[1, 1] == 0.0
    assert s[1, 2] == 1.0
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)


def test_softmax_rejects_fully_masked_row():
    with pytest.raises(T.ShapeMismatch):
        T.softmax(T.Tensor(np.zeros((2, 3))), np.array([[True, True, True], [False, False, False]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(T.Tensor(x)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 16)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_layer_norm_standardizes_rows(x):
    x = x + np.arange(x.shape[-1])  # keep rows away from exactly constant
    y = T.layer_norm(T.Tensor(x)).data
    assert np.all(np.abs(y.mean(-1)) < 1e-7)
    var = x.var(-1)
    expected = var / (var + 1e-8)
    np.testing.assert_allclose(y.var(-1), expected, atol=1e-9)
    assert np.all(np.abs(y.var(-1)[var > 1e-2] - 1.0) < 1e-6)


def test_sigmoid_is_stable_for_large_inputs():
    s = T.sigmoid(T.Tensor(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_dropout_eval_mode_is_identity_and_train_mode_is_inverted():
    x = T.Tensor(np.ones((200, 200)))
    assert T.dropout(x, 0.4, training=False) is x
    assert T.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x
    y = T.dropout(x, 0.4, training=True, rng=np.random.default_rng(0)).data
    kept = y[y > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.6)
    assert abs(y.mean() - 1.0) < 0.02
    with pytest.raises(ValueError):
        T.dropout(x, 1.0, training=True, rng=np.random.default_rng(0))


def test_backward_accumulates_reused_nodes():
    p = {"x": T.parameter(np.array([1.5, -2.0]), "x")}
    with T.GradGraph() as g:
        y = T.mul(p["x"], p["x"])
        loss = T.tsum(T.add(y, p["x"]))
    grads = T.backward(g, loss, p)
    np.testing.assert_allclose(grads["x"], 2 * p["x"].data + 1)


def test_backward_zero_grad_for_unreachable_parameter():
    p = {"a": T.parameter(np.ones(3), "a"), "unused": T.parameter(np.ones((2, 2)), "unused")}
    with T.GradGraph() as g:
        loss = T.tsum(p["a"])
    grads = T.backward(g, loss, p)
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))
    np.testing.assert_array_equal(grads["a"], np.ones(3))


def test_backward_requires_scalar_loss_recorded_in_graph():
    p = T.parameter(np.ones(3), "p")
    with T.GradGraph() as g:
        y = T.mul(p, p)
    with pytest.raises(T.NotScalarLoss):
        T.backward(g, y)
    with T.GradGraph():
        other = T.tsum(T.mul(p, p))
    with pytest.raises(T.DetachedNode):
        T.backward(g, other)


def test_constant_inputs_are_not_recorded():
    with T.GradGraph() as g:
        T.add(T.Tensor(np.ones(2)), T.Tensor(np.ones(2)))
    assert g.nodes == []


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_is_raised():
    with pytest.raises(T.NonFiniteResult):
        T.mul(T.Tensor(np.array([1e200])), T.Tensor(np.array([1e200])))


def test_shape_mismatch_is_raised():
    with pytest.raises(T.ShapeMismatch):
        T.add(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4,))))
    with pytest.raises(T.ShapeMismatch):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 2))))


def test_graph_dump_lists_every_node():
    p = T.parameter(np.ones((2, 2)), "w")
    with T.GradGraph() as g:
        T.tsum(T.tanh(T.matmul(p, p)))
    text = g.dump()
    assert "leaf w" in text
    for op in ("matmul", "tanh", "sum"):
        assert op in text
    assert len(text.splitlines()) == len(g.nodes) + len(g.leaves)


def test_grad_check_quadratic_is_exact():
    with T.precision(np.float64):
        p = {"theta": T.parameter(np.random.default_rng(0).normal(size=7), "theta")}
        report = T.grad_check(lambda: T.tsum(T.mul(p["theta"], p["theta"])), p, eps=1e-5)
    assert report.max_error < 1e-8


def test_grad_check_detects_a_wrong_backward():
    def bad_square(x):
        return T._make(x.data ** 2, (x,), lambda g: (g * x.data,), "bad_square")  # missing factor 2

    with T.precision(np.float64):
        p = {"x": T.parameter(np.array([0.7, -1.3]), "x")}
        with pytest.raises(T.ToleranceExceeded):
            T.grad_check(lambda: T.tsum(bad_square(p["x"])), p)


def test_grad_check_requires_float64():
    p = {"x": T.parameter(np.ones(2, dtype=np.float32), "x")}
    with pytest.raises(TypeError):
        T.grad_check(lambda: T.tsum(p["x"]), p)


def test_grad_check_samples_every_parameter_first():
    with T.precision(np.float64):
        p = {f"p{i}": T.parameter(np.ones(10) * i, f"p{i}") for i in range(5)}
        f = lambda: T.tsum(T.stack([p[k] for k in p]))
        report = T.grad_check(f, p, n_samples=5)
    assert report.groups() == set(p)


def test_precision_context_restores_default():
    assert T.default_dtype() == np.float32
    with T.precision(np.float64):
        assert T.as_tensor([1.0]).dtype == np.float64
    assert T.as_tensor([1.0]).dtype == np.float32


def test_unfold_same_matches_explicit_padding():
    x = np.arange(10, dtype=np.float64).reshape(1, 5, 2)
    out = T.unfold_same(T.Tensor(x), 4).data  # left pad 1, right pad 2
    padded = np.concatenate([np.zeros((1, 1, 2)), x, np.zeros((1, 2, 2))], axis=1)
    for t in range(5):
        np.testing.assert_array_equal(out[0, t], padded[0, t:t + 4].ravel())
