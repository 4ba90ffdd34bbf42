import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epigraph import tensor as tt
from epigraph.errors import ConfigError, ContractError, DimensionError, NumericError
from epigraph.gradcheck import grad_check
from epigraph.tensor import AdamState, Tape, Tensor, adam_step, backward, mse_loss


def fd_ok(loss_fn, params, tol=1e-4, eps=1e-5):
    report = grad_check(loss_fn, params, epsilon=eps, tolerance=tol)
    assert report.passed, str(report)


def away_from_kinks(a, margin=5e-2):
    """Shift entries off activation kinks so central differences stay clean."""
    return a + np.where(np.abs(a) < margin, np.sign(a + 0.5) * margin, 0.0)


small_arrays = st.integers(2, 4).flatmap(
    lambda n: st.lists(
        st.floats(-3, 3, allow_nan=False, width=32), min_size=n, max_size=n
    )
)


# --- forward examples ---


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = tt.matmul(Tensor(np.eye(2)), a)
    np.testing.assert_array_equal(out.data, a.data)


def test_matmul_dot():
    out = tt.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as err:
        tt.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_matmul_grad_of_sum_is_ones_times_bt():
    rng = tt.make_rng(3)
    A = tt.param(rng.normal(size=(3, 4)))
    B = Tensor(rng.normal(size=(4, 2)))
    with Tape():
        loss = tt.sum_(tt.matmul(A, B))
    backward(loss)
    np.testing.assert_allclose(A.grad, np.ones((3, 2)) @ B.data.T, rtol=1e-12)
    fd_ok(lambda: tt.sum_(tt.matmul(A, B)), {"A": A}, tol=1e-6)


def test_softmax_symmetry_and_stability():
    np.testing.assert_allclose(tt.softmax(Tensor([0.0, 0.0, 0.0]), 0).data, np.full(3, 1 / 3))
    out = tt.softmax(Tensor([1000.0, 1000.0]), 0).data
    np.testing.assert_allclose(out, [0.5, 0.5])
    assert np.isfinite(out).all()


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        tt.softmax(Tensor([1.0, np.nan]), 0)
    with pytest.raises(NumericError):
        tt.softmax(Tensor([1.0, np.inf]), 0)


def test_sigmoid_center():
    assert tt.sigmoid(Tensor(np.zeros(1))).data[0] == 0.5


def test_leaky_relu_definition():
    assert tt.leaky_relu(Tensor(np.array([-2.0])), 0.01).data[0] == pytest.approx(-0.02)


def test_layer_norm_constant_vector_is_zero():
    gain, bias = Tensor(np.ones(4)), Tensor(np.zeros(4))
    out = tt.layer_norm(Tensor(np.full((2, 4), 7.0)), gain, bias)
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


# --- backward contracts ---


def test_backward_sum_gives_ones():
    x = tt.param(np.arange(6.0).reshape(2, 3))
    with Tape():
        loss = tt.sum_(x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = tt.param(np.array([1.0, 2.0, 3.0]))
    with Tape():
        loss = tt.sum_(tt.mul(x, x))
    backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_double_backward_raises():
    x = tt.param(np.ones(3))
    with Tape():
        loss = tt.sum_(tt.mul(x, x))
    backward(loss)
    with pytest.raises(ContractError):
        backward(loss)


def test_backward_requires_scalar_loss():
    x = tt.param(np.ones(3))
    with Tape():
        y = tt.mul(x, x)
    with pytest.raises(ContractError):
        backward(y)


def test_backward_without_tape_raises():
    x = tt.param(np.ones(3))
    y = tt.sum_(tt.mul(x, x))  # no active tape
    with pytest.raises(ContractError):
        backward(y)


def test_no_grad_tensor_never_accumulates():
    x = Tensor(np.ones(3))  # requires_grad=False
    w = tt.param(np.ones(3))
    with Tape():
        loss = tt.sum_(tt.mul(x, w))
    backward(loss)
    assert x.grad is None
    assert w.grad is not None


# --- dropout ---


def test_dropout_eval_is_bit_identical_identity():
    x = Tensor(np.linspace(0, 1, 12).reshape(3, 4))
    out = tt.dropout(x, 0.5, tt.make_rng(0), training=False)
    assert out is x


def test_dropout_rate_validation():
    x = Tensor(np.ones(4))
    with pytest.raises(ConfigError):
        tt.dropout(x, 1.0, tt.make_rng(0), training=True)
    with pytest.raises(ConfigError):
        tt.dropout(x, -0.1, tt.make_rng(0), training=True)


def test_dropout_zeroes_and_rescales():
    rate = 0.3
    x = Tensor(np.ones(20000))
    out = tt.dropout(x, rate, tt.make_rng(5), training=True).data
    dropped = np.mean(out == 0.0)
    assert abs(dropped - rate) < 0.02
    survivors = out[out != 0.0]
    np.testing.assert_allclose(survivors, 1.0 / (1.0 - rate))


def test_dropout_gradient_matches_mask():
    x = tt.param(np.ones(64))

    def loss_fn():
        fresh = tt.make_rng(7)  # identical mask on every call
        return tt.sum_(tt.dropout(x, 0.25, fresh, training=True))

    fd_ok(loss_fn, {"x": x}, tol=1e-6)


# --- finite-difference properties over the op suite ---


@settings(max_examples=25, deadline=None)
@given(small_arrays, st.sampled_from(["add", "sub", "mul"]))
def test_elementwise_grads_match_fd(values, op):
    a = tt.param(away_from_kinks(np.array(values)))
    b = tt.param(away_from_kinks(np.array(values[::-1]) + 0.25))
    fn = getattr(tt, op)
    fd_ok(lambda: tt.sum_(tt.mul(fn(a, b), fn(a, b))), {"a": a, "b": b})


@settings(max_examples=25, deadline=None)
@given(small_arrays)
def test_softmax_jvp_matches_fd(values):
    x = tt.param(np.array(values))
    probe = Tensor(np.linspace(0.5, 1.5, len(values)))
    fd_ok(lambda: tt.sum_(tt.mul(tt.softmax(x, 0), probe)), {"x": x}, tol=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mixed_pipeline_grads_match_fd(seed):
    rng = tt.make_rng(seed)
    a = tt.param(away_from_kinks(rng.normal(size=(2, 3, 4))))
    w = tt.param(rng.normal(size=(4, 5)))
    gain = tt.param(rng.uniform(0.5, 1.5, size=5))
    bias = tt.param(rng.normal(size=5))
    target = Tensor(rng.normal(size=(2, 3, 5)))

    def loss_fn():
        h = tt.matmul(a, w)
        h = tt.layer_norm(h, gain, bias)
        h = tt.leaky_relu(h, 0.2)
        h = tt.softmax(h, axis=-1)
        return mse_loss(h, target)

    fd_ok(loss_fn, {"a": a, "w": w, "gain": gain, "bias": bias})


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batched_matmul_broadcast_grads(seed):
    rng = tt.make_rng(seed)
    a = tt.param(rng.normal(size=(3, 2, 4)))
    b = tt.param(rng.normal(size=(4, 2)))  # broadcast over the leading axis
    c = tt.param(rng.normal(size=(3, 2, 2)))

    def loss_fn():
        return tt.sum_(tt.mul(tt.matmul(tt.matmul(a, b), c), 0.5))

    fd_ok(loss_fn, {"a": a, "b": b, "c": c})


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_structural_ops_grads(seed):
    rng = tt.make_rng(seed)
    x = tt.param(rng.normal(size=(3, 4)))
    y = tt.param(rng.normal(size=(2, 4)))

    def loss_fn():
        joined = tt.concat([x, y], axis=0)  # (5, 4)
        part = tt.narrow(joined, 0, 1, 3)
        part = tt.swapaxes(part, 0, 1)
        part = tt.reshape(part, (12,))
        picked = tt.take(part, [0, 3, 3, 7], axis=0)
        return tt.sum_(tt.mul(picked, picked))

    fd_ok(loss_fn, {"x": x, "y": y}, tol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mask_and_reduction_grads(seed):
    rng = tt.make_rng(seed)
    x = tt.param(rng.normal(size=(3, 4)))
    keep = rng.random((3, 4)) > 0.4
    keep[:, 0] = True  # every row keeps something

    def loss_fn():
        masked = tt.mask_fill(x, keep)
        probs = tt.softmax(masked, axis=-1)
        return tt.mean(tt.mul(probs, probs))

    fd_ok(loss_fn, {"x": x})


def test_broadcast_rejects_incompatible():
    with pytest.raises(DimensionError):
        tt.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


# --- mse ---


def test_mse_examples():
    assert mse_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
    assert mse_loss(Tensor([1.0, 1.0]), Tensor([0.0, 2.0])).item() == pytest.approx(1.0)
    with pytest.raises(ContractError):
        mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_mse_gradient_formula():
    pred = tt.param(np.array([1.0, 3.0, -2.0]))
    target = Tensor(np.array([0.0, 1.0, 1.0]))
    with Tape():
        loss = mse_loss(pred, target)
    backward(loss)
    np.testing.assert_allclose(pred.grad, 2 * (pred.data - target.data) / 3, rtol=1e-12)


# --- Adam ---


def _reference_adam(params, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    # straight transcription of the bias-corrected update
    p = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    for t, grads in enumerate(grads_seq, start=1):
        for k in p:
            g = grads[k]
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1**t)
            vhat = v[k] / (1 - b2**t)
            p[k] -= lr * mhat / (np.sqrt(vhat) + eps)
    return p


def test_adam_zero_gradient_is_fixed_point():
    params = {"w": tt.param(np.array([1.0, -2.0, 3.0]))}
    state = AdamState(learning_rate=0.01)
    for _ in range(5):
        adam_step(params, {"w": np.zeros(3)}, state)
    np.testing.assert_array_equal(params["w"].data, [1.0, -2.0, 3.0])
    assert state.t == 5


def test_adam_matches_reference_formula():
    rng = tt.make_rng(11)
    init = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
    grads_seq = [
        {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)} for _ in range(7)
    ]
    params = {k: tt.param(v.copy()) for k, v in init.items()}
    state = AdamState(learning_rate=1e-3)
    for grads in grads_seq:
        adam_step(params, grads, state)
    expected = _reference_adam(init, grads_seq, 1e-3)
    for k in init:
        np.testing.assert_allclose(params[k].data, expected[k], rtol=1e-12, atol=1e-15)


def test_adam_step_counter_and_shape_check():
    params = {"w": tt.param(np.zeros(2))}
    state = AdamState(learning_rate=1e-3)
    adam_step(params, {"w": np.ones(2)}, state)
    assert state.t == 1
    adam_step(params, {"w": np.ones(2)}, state)
    assert state.t == 2
    with pytest.raises(ContractError):
        adam_step(params, {"w": np.ones(3)}, state)
