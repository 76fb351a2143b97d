import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcmatch import numerics as nx
from vcmatch.numerics import AdamState, NumericalError, ShapeError, Tensor


def _params(rng, **shapes):
    return {k: rng.normal(size=s) for k, s in shapes.items()}


def _central_diff(f, arr, eps=1e-6):
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def test_softmax_of_zeros_is_uniform():
    out = nx.softmax(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_survives_large_inputs():
    out = nx.softmax(Tensor(np.array([1000.0, 1000.0, -1000.0])))
    np.testing.assert_allclose(out.data, [0.5, 0.5, 0.0], atol=1e-12)


def test_sigmoid_of_zero_is_half():
    assert nx.sigmoid(Tensor(np.zeros(1))).item() == 0.5


def test_sigmoid_is_stable_at_extremes():
    out = nx.sigmoid(Tensor(np.array([-800.0, 800.0]))).data
    assert out[0] == 0.0 and out[1] == 1.0


def test_linear_layer_matches_independent_central_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 4))
    p = _params(rng, W=(4, 3), b=(3,))

    def value():
        return float(np.sum(np.tanh(x @ p["W"] + p["b"]) ** 2))

    tensors = {k: Tensor(v, requires_grad=True) for k, v in p.items()}
    loss = nx.sum_(nx.mul(nx.tanh(nx.linear(Tensor(x), tensors["W"], tensors["b"])),
                          nx.tanh(nx.linear(Tensor(x), tensors["W"], tensors["b"]))))
    loss.backward()
    for name in p:
        numeric = _central_diff(value, p[name])
        np.testing.assert_allclose(tensors[name].grad, numeric, rtol=1e-4, atol=1e-8)


def test_quadratic_loss_gradient_is_exact():
    rng = np.random.default_rng(0)
    params = {"theta": rng.normal(size=(6,))}
    err = nx.grad_check(lambda p: nx.sum_(nx.mul(p["theta"], p["theta"])) * 0.5, params, probes=6)
    assert err < 1e-8


def test_grad_check_rejects_zero_epsilon():
    with pytest.raises(ValueError):
        nx.grad_check(lambda p: nx.sum_(p["a"]), {"a": np.ones(2)}, eps=0.0)


def test_grad_check_rejects_single_precision():
    with pytest.raises(TypeError):
        nx.grad_check(lambda p: nx.sum_(p["a"]), {"a": np.ones(2, dtype=np.float32)})


def test_grad_check_catches_a_wrong_gradient():
    def broken_square(a):
        return nx._make(a.data ** 2, (a,), "broken", lambda g: ((a, g * a.data),))  # should be 2*a

    err = nx.grad_check(lambda p: nx.sum_(broken_square(p["a"])), {"a": np.array([1.0, 2.0, -3.0])})
    assert err > 0.1


# every differentiable primitive, each through the checker on random small shapes

def _primitive_losses(rng, n, m):
    w = rng.normal(size=(n, m))  # fixed weights so each loss is a generic scalar
    return {
        "add": (lambda p: nx.sum_(nx.mul(nx.add(p["a"], p["b"]), w)), {"a": (n, m), "b": (m,)}),
        "neg": (lambda p: nx.sum_(nx.mul(nx.neg(p["a"]), w)), {"a": (n, m)}),
        "mul": (lambda p: nx.sum_(nx.mul(nx.mul(p["a"], p["b"]), w)), {"a": (n, m), "b": (n, 1)}),
        "matmul": (lambda p: nx.sum_(nx.mul(nx.matmul(p["a"], p["b"]), w)), {"a": (n, 3), "b": (3, m)}),
        "batched_matmul": (lambda p: nx.sum_(nx.tanh(nx.matmul(p["a"], p["b"]))), {"a": (2, n, 3), "b": (2, 3, m)}),
        "stacked_rows_matmul": (lambda p: nx.sum_(nx.tanh(nx.matmul(p["a"], p["b"]))), {"a": (2, n, 3), "b": (3, m)}),
        "linear": (lambda p: nx.sum_(nx.mul(nx.linear(p["x"], p["W"], p["b"]), w)), {"x": (n, 4), "W": (4, m), "b": (m,)}),
        "tanh": (lambda p: nx.sum_(nx.mul(nx.tanh(p["a"]), w)), {"a": (n, m)}),
        "sigmoid": (lambda p: nx.sum_(nx.mul(nx.sigmoid(p["a"]), w)), {"a": (n, m)}),
        "log": (lambda p: nx.sum_(nx.mul(nx.log(nx.add(nx.mul(p["a"], p["a"]), 1.0)), w)), {"a": (n, m)}),
        "softmax_last": (lambda p: nx.sum_(nx.mul(nx.softmax(p["a"], axis=-1), w)), {"a": (n, m)}),
        "softmax_first": (lambda p: nx.sum_(nx.mul(nx.softmax(p["a"], axis=0), w)), {"a": (n, m)}),
        "mean_pool": (lambda p: nx.sum_(nx.tanh(nx.mean(p["a"], axis=1))), {"a": (n, m, 2)}),
        "mean_all": (lambda p: nx.mean(nx.mul(p["a"], p["a"])), {"a": (n, m)}),
        "normalize": (lambda p: nx.sum_(nx.mul(nx.normalize(p["a"]), w)), {"a": (n, m)}),
        "sum_axis": (lambda p: nx.sum_(nx.tanh(nx.sum_(p["a"], axis=0))), {"a": (n, m)}),
        "concat": (lambda p: nx.sum_(nx.tanh(nx.concat([p["a"], p["b"]], axis=-1))), {"a": (n, m), "b": (n, 2)}),
        "stack": (lambda p: nx.sum_(nx.tanh(nx.stack([p["a"], p["b"]], axis=1))), {"a": (n, m), "b": (n, m)}),
        "gather_rows": (lambda p: nx.sum_(nx.mul(nx.gather_rows(p["t"], [0, n - 1, 0]), w[:1])), {"t": (n, m)}),
        "reshape": (lambda p: nx.sum_(nx.tanh(nx.reshape(p["a"], (m, n)))), {"a": (n, m)}),
        "transpose": (lambda p: nx.sum_(nx.mul(nx.transpose(nx.tanh(p["a"]), (1, 0)), w.T)), {"a": (n, m)}),
        "getitem": (lambda p: nx.sum_(nx.tanh(p["a"][:, 1:])), {"a": (n, m + 1)}),
        "clip": (lambda p: nx.sum_(nx.mul(nx.clip(p["a"], -0.5, 0.5), w)), {"a": (n, m)}),
    }


@pytest.mark.parametrize("name", sorted(_primitive_losses(np.random.default_rng(0), 2, 2)))
def test_every_primitive_passes_gradient_check(name):
    for trial in range(3):
        rng = np.random.default_rng([trial, 17])
        n, m = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        loss_fn, shapes = _primitive_losses(rng, n, m)[name]
        params = {k: rng.normal(size=s) for k, s in shapes.items()}
        if name == "clip":  # keep probes away from the kinks
            params["a"] = np.sign(params["a"]) * (0.6 + np.abs(params["a"])) * (rng.random((n, m)) > 0.5)
        assert nx.grad_check(loss_fn, params, probes=12, seed=trial) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 10_000))
def test_matmul_backward_matches_dense_formula(batch, k, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(batch, 3, k)), requires_grad=True)
    b = Tensor(rng.normal(size=(k, 2)), requires_grad=True)
    g = rng.normal(size=(batch, 3, 2))
    nx.matmul(a, b).backward(g)
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, np.einsum("bik,bij->kj", a.data, g), atol=1e-12)


def test_normalize_gives_zero_mean_unit_variance():
    rng = np.random.default_rng(4)
    out = nx.normalize(Tensor(rng.normal(3.0, 5.0, size=(4, 50))), eps=0.0).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-12)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError):
        nx.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=-1)


def test_log_of_nonpositive_raises():
    with pytest.raises(NumericalError):
        nx.log(Tensor(np.array([0.0, 1.0])))


def test_repeated_gather_indices_accumulate():
    table = Tensor(np.zeros((3, 2)), requires_grad=True)
    nx.sum_(nx.gather_rows(table, [1, 1, 1])).backward()
    np.testing.assert_array_equal(table.grad, [[0, 0], [3, 3], [0, 0]])


def test_adam_single_step_hand_evaluated():
    params = {"theta": np.array([1.0])}
    state = AdamState(lr=0.001)
    nx.adam_step(params, {"theta": np.array([0.5])}, state)
    # m_hat = 0.5, v_hat = 0.25, step = lr * 0.5 / (0.5 + eps)
    expected = 1.0 - 0.001 * 0.5 / (math.sqrt(0.25) + 1e-8)
    assert params["theta"][0] == pytest.approx(expected, abs=1e-15)
    assert params["theta"][0] == pytest.approx(0.999, abs=1e-7)


def test_adam_zero_gradient_leaves_parameters():
    params = {"theta": np.array([1.0, -2.0])}
    state = AdamState(lr=0.1)
    for _ in range(5):
        nx.adam_step(params, {"theta": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["theta"], [1.0, -2.0])


def test_adam_nonfinite_gradient_names_parameter():
    with pytest.raises(NumericalError, match="layer.W"):
        nx.adam_step({"layer.W": np.ones(2)}, {"layer.W": np.array([1.0, np.nan])}, AdamState())


def test_adam_runs_are_bitwise_reproducible():
    def run():
        rng = np.random.default_rng(5)
        params = {"w": rng.normal(size=(3, 3))}
        state = AdamState(lr=0.01)
        for _ in range(20):
            nx.adam_step(params, {"w": np.sin(params["w"]) + rng.normal(size=(3, 3))}, state)
        return params["w"]

    assert run().tobytes() == run().tobytes()


def test_adam_default_hyperparameters():
    state = AdamState()
    assert (state.lr, state.beta1, state.beta2, state.eps) == (1e-5, 0.9, 0.999, 1e-8)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"a.W": rng.normal(size=(3, 4)), "b": rng.normal(size=(5,))}
    config = {"lr": 1e-5, "dims": [3, 4], "name": "x"}
    nx.save_checkpoint(tmp_path / "ck.npz", arrays, config)
    loaded, cfg = nx.load_checkpoint(tmp_path / "ck.npz")
    assert cfg == config
    for k in arrays:
        np.testing.assert_allclose(loaded[k], arrays[k], rtol=0, atol=1e-12)


def test_nonfinite_output_is_rejected():
    with pytest.raises(NumericalError):
        nx.mul(Tensor(np.array([1e308])), Tensor(np.array([1e308])))
