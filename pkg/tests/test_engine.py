import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edformer import engine as E
from helpers import central_diff, max_rel_err


def grad_of(fn, *arrays):
    leaves = [E.tensor(a, requires_grad=True) for a in arrays]
    with E.Tape() as tape:
        out = fn(*leaves)
    tape.backward(out)
    return [leaf.grad for leaf in leaves]


def fd_check(fn, *arrays, tol=1e-6):
    analytic = grad_of(fn, *arrays)
    for i, a in enumerate(arrays):
        def scalar(v, i=i):
            args = list(arrays)
            args[i] = v
            return float(fn(*[E.tensor(x) for x in args]).data)
        assert max_rel_err(analytic[i], central_diff(scalar, a)) < tol


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    b = np.array([[3.0, 5.0], [7.0, 9.0]])
    np.testing.assert_array_equal((E.tensor(np.eye(2)) @ E.tensor(b)).data, b)


def test_matmul_hand_case():
    out = E.tensor([[1.0, 2.0], [3.0, 4.0]]) @ E.tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_zero_annihilates():
    b = np.random.default_rng(0).normal(size=(2, 2))
    np.testing.assert_array_equal((E.tensor(np.zeros((2, 2))) @ E.tensor(b)).data, np.zeros((2, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(E.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        E.tensor(np.ones((2, 3))) @ E.tensor(np.ones((2, 3)))


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(1)
    fd_check(lambda a, b: E.sum_(E.matmul(a, b) ** 2),
             rng.uniform(-2, 2, (3, 2, 4)), rng.uniform(-2, 2, (4, 5)))


# -- softmax -----------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(E.softmax(E.tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_ln2():
    np.testing.assert_allclose(E.softmax(E.tensor([0.0, math.log(2)])).data, [1 / 3, 2 / 3],
                               atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance_and_normalization(xs, c):
    x = np.array(xs)
    p = E.softmax(E.tensor(x)).data
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(E.softmax(E.tensor(x + c)).data, p, atol=1e-12)


def test_softmax_large_inputs_are_stable():
    p = E.softmax(E.tensor([1000.0, 1000.0])).data
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_softmax_invalid_axis():
    with pytest.raises(E.ShapeError):
        E.softmax(E.tensor(np.ones((2, 2))), axis=2)


def test_softmax_gradient():
    x = np.random.default_rng(2).uniform(-2, 2, (3, 4))
    w = np.random.default_rng(3).normal(size=(3, 4))
    fd_check(lambda t: E.sum_(E.softmax(t, axis=-1) * w), x)


# -- relu --------------------------------------------------------------------

def test_relu_values():
    np.testing.assert_array_equal(E.relu(E.tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    np.testing.assert_array_equal(E.relu(E.tensor([0.5, 3.0])).data, [0.5, 3.0])


def test_relu_gradient_matches_fd():
    (g,) = grad_of(lambda t: E.sum_(E.relu(t)), np.array([-1.0, 2.0]))
    fd = central_diff(lambda v: float(np.maximum(v, 0).sum()), np.array([-1.0, 2.0]))
    np.testing.assert_allclose(g, fd, atol=1e-9)
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_relu_subgradient_at_zero_is_zero():
    (g,) = grad_of(lambda t: E.sum_(E.relu(t)), np.array([0.0]))
    assert g[0] == 0.0


# -- layer norm --------------------------------------------------------------

def test_layer_norm_constant_slice():
    np.testing.assert_array_equal(E.layer_norm(E.tensor([5.0] * 4), 1e-5).data, [0.0] * 4)


def test_layer_norm_two_points():
    np.testing.assert_allclose(E.layer_norm(E.tensor([1.0, 3.0]), 1e-300).data, [-1.0, 1.0],
                               atol=1e-15)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_layer_norm_moments(seed):
    h = np.random.default_rng(seed).uniform(-5, 5, (3, 16))
    out = E.layer_norm(E.tensor(h), 1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_gradient():
    h = np.random.default_rng(4).uniform(-2, 2, (2, 5))
    w = np.random.default_rng(5).normal(size=(2, 5))
    fd_check(lambda t: E.sum_(E.layer_norm(t, 1e-5) * w), h)


# -- the remaining differentiable ops ----------------------------------------

_W42 = np.random.default_rng(11).normal(size=(4, 2))

OPS = {
    "add_broadcast": (lambda a, b: E.sum_((a + b) ** 2), [(3, 4), (4,)]),
    "sub_broadcast": (lambda a, b: E.sum_((a - b) ** 2), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: E.sum_(a * b * a), [(2, 3), (2, 3)]),
    "div": (lambda a, b: E.sum_(a / (b * b + 1.0)), [(2, 3), (1, 3)]),
    "mean_axis": (lambda a: E.sum_(E.mean(a, axis=1, keepdims=True) ** 2), [(2, 3, 4)]),
    "sum_axes": (lambda a: E.sum_(E.sum_(a, axis=(0, 2)) ** 2), [(2, 3, 4)]),
    "reshape_transpose": (lambda a: E.sum_((a.reshape(4, 6).transpose(1, 0) @ _W42) ** 2),
                          [(2, 3, 4)]),
    "swapaxes": (lambda a: E.sum_((a.swapaxes(1, 2) @ _W42[:3, :1]) ** 2), [(2, 3, 4)]),
    "floored_sqrt": (lambda a: E.sum_(E.floored_sqrt(a * a + 0.5, 1e-5)), [(3, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    fd_check(fn, *[rng.uniform(-2, 2, s) for s in shapes])


def test_floored_sqrt_has_zero_gradient_on_floor():
    (g,) = grad_of(lambda t: E.sum_(E.floored_sqrt(t, 1e-5)), np.zeros(3))
    np.testing.assert_array_equal(g, 0.0)


# -- backward / tape ---------------------------------------------------------

def test_square_gradient():
    x = E.tensor(3.0, requires_grad=True)
    with E.Tape() as tape:
        loss = x ** 2
    tape.backward(loss)
    assert float(x.grad) == 6.0


def test_matmul_chain_gradient():
    rng = np.random.default_rng(6)
    a, b, c = (rng.uniform(-2, 2, s) for s in [(3, 4), (4, 5), (5, 2)])
    fd_check(lambda x, y, z: E.sum_(E.relu(x @ y) @ z), a, b, c)


def test_detached_tensor_gets_no_gradient():
    x = E.tensor([1.0, 2.0], requires_grad=True)
    c = E.tensor([3.0, 4.0])
    with E.Tape() as tape:
        loss = E.sum_(x * c)
    tape.backward(loss)
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_backward_twice_is_an_error():
    x = E.tensor(1.0, requires_grad=True)
    with E.Tape() as tape:
        loss = x * x
    tape.backward(loss)
    with pytest.raises(E.TapeError):
        tape.backward(loss)


def test_backward_requires_scalar():
    x = E.tensor([1.0, 2.0], requires_grad=True)
    with E.Tape() as tape:
        y = x * 2.0
    with pytest.raises(E.TapeError, match="scalar"):
        tape.backward(y)


def test_backward_requires_loss_on_tape():
    x = E.tensor(2.0, requires_grad=True)
    loss = x * x  # no tape active
    with pytest.raises(E.TapeError):
        E.backward(loss)
    with E.Tape() as other:
        pass
    with pytest.raises(E.TapeError):
        other.backward(loss)


def test_tape_records_in_topological_order():
    x = E.tensor(np.ones(3), requires_grad=True)
    with E.Tape() as tape:
        y = E.sum_(E.relu(x * 2.0) + x)
    index = {id(r.output): i for i, r in enumerate(tape.records)}
    for i, rec in enumerate(tape.records):
        for inp in rec.inputs:
            assert index.get(id(inp), -1) < i
    assert y.tape_id == len(tape) - 1


def test_no_recording_without_tape():
    x = E.tensor(1.0, requires_grad=True)
    y = x * 3.0
    assert y.tape_id is None and not y.requires_grad


def test_non_finite_data_rejected():
    with pytest.raises(E.NonFiniteError):
        E.tensor([1.0, np.nan])
    with pytest.raises(E.NonFiniteError), np.errstate(over="ignore"):
        E.tensor([1e308]) * 10.0


def test_determinism_bitwise():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    r1 = E.softmax(E.tensor(a) @ E.tensor(b)).data
    r2 = E.softmax(E.tensor(a) @ E.tensor(b)).data
    assert r1.tobytes() == r2.tobytes()


# -- Adam --------------------------------------------------------------------

def scalar_adam(p, g, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_zero_gradient_leaves_params():
    p = E.tensor([1.0, -2.0], requires_grad=True)
    state = E.AdamState.for_params([p], lr=0.1)
    E.adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    p = E.tensor([1.0, 1.0], requires_grad=True)
    state = E.AdamState.for_params([p], lr=0.01)
    E.adam_step([p], [np.array([3.0, -0.5])], state)
    np.testing.assert_allclose(p.data - 1.0, [-0.01, 0.01], rtol=1e-6)


def test_adam_two_steps_match_scalar_recurrence():
    p = E.tensor([0.3, -1.2], requires_grad=True)
    g = np.array([0.7, -2.5])
    state = E.AdamState.for_params([p], lr=0.05)
    for _ in range(2):
        E.adam_step([p], [g], state)
    expected = [scalar_adam(0.3, 0.7, 2, 0.05), scalar_adam(-1.2, -2.5, 2, 0.05)]
    np.testing.assert_allclose(p.data, expected, rtol=1e-14)
    assert state.t == 2


def test_adam_shape_mismatch():
    p = E.tensor([1.0, 2.0], requires_grad=True)
    state = E.AdamState.for_params([p])
    with pytest.raises(E.ShapeError):
        E.adam_step([p], [np.zeros(3)], state)


def test_adam_optimizer_reduces_quadratic():
    p = E.tensor([5.0, -3.0], requires_grad=True)
    opt = E.Adam([p], lr=0.1)
    for _ in range(300):
        with E.Tape() as tape:
            loss = E.sum_(p * p)
        tape.backward(loss)
        opt.step()
    assert np.all(np.abs(p.data) < 0.05)
