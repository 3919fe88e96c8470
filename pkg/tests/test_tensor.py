"""Autodiff core: forward oracles, gradient checks, tape semantics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphssm.tensor import (
    Tensor, ShapeError, conv2d, matmul, no_grad, grad_enabled,
    set_debug_checks, debug_checks_enabled,
)

from conftest import fd_check, leaf


# -- forward oracles -----------------------------------------------------


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(4, 4)))
    eye = Tensor(np.eye(4))
    assert np.array_equal((a @ eye).data, a.data)
    assert np.array_equal((eye @ a).data, a.data)


def test_matmul_projector_zeroes_column():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    p = Tensor([[1.0, 0.0], [0.0, 0.0]])
    out = (x @ p).data
    assert np.array_equal(out, [[1.0, 0.0], [3.0, 0.0]])


def test_matmul_hand_values():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal((a @ b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_relu_hand_values():
    x = Tensor([-1.0, 0.0, 2.0])
    assert np.array_equal(x.relu().data, [0.0, 0.0, 2.0])


def test_sigmoid_center_and_tails():
    assert Tensor([0.0]).sigmoid().item() == 0.5
    # the stable form must not overflow in either tail
    big = Tensor([1000.0, -1000.0]).sigmoid().data
    assert big[0] == 1.0 and big[1] == 0.0


def test_softplus_tails_finite():
    out = Tensor([1000.0, -700.0, 0.0]).softplus().data
    assert out[0] == 1000.0
    assert 0.0 < out[1] < 1e-300
    assert abs(out[2] - np.log(2.0)) < 1e-15


def test_softmax_uniform_rows():
    out = Tensor(np.full((3, 5), 2.7)).softmax().data
    assert np.allclose(out, 0.2, atol=1e-15)


def test_exp_log_roundtrip():
    x = np.linspace(0.1, 3.0, 7)
    assert np.allclose(Tensor(x).exp().log().data, x, atol=1e-12)


def test_conv2d_delta_kernel_is_identity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 6)))
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    assert np.array_equal(conv2d(x, Tensor(k)).data, x.data)


def test_conv2d_zero_kernel():
    x = Tensor(np.ones((4, 4)))
    out = conv2d(x, Tensor(np.zeros((3, 3)))).data
    assert np.array_equal(out, np.zeros((4, 4)))


def test_conv2d_matches_nested_loops():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 4))
    k = rng.normal(size=(3, 3))
    out = conv2d(Tensor(x), Tensor(k)).data
    xp = np.pad(x, 1)
    want = np.zeros((4, 4))
    for i in range(3):
        for j in range(3):
            want += k[i, j] * xp[i:i + 4, j:j + 4]
    assert np.array_equal(out, want)


def test_conv2d_batched_leading_dims():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 5))
    k = rng.normal(size=(3, 3))
    out = conv2d(Tensor(x), Tensor(k)).data
    for b in range(2):
        single = conv2d(Tensor(x[b]), Tensor(k)).data
        assert np.array_equal(out[b], single)


# -- gradient hand oracles -------------------------------------------------


def test_grad_of_elementwise_square():
    w = Tensor([1.0, 2.0], requires_grad=True)
    (w * w).sum().backward()
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_grad_accumulates_across_backward_calls():
    w = Tensor([3.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    first = w.grad.copy()
    loss.backward()
    assert np.array_equal(w.grad, 2.0 * first)


def test_backward_seed_scales_gradient():
    x = Tensor([1.0, 1.0], requires_grad=True)
    y = x * 2.0
    y.backward(seed=np.array([1.0, 2.0]))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_seed_shape_mismatch():
    x = Tensor([1.0, 1.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward(seed=np.ones(3))


def test_detached_tensor_blocks_gradient():
    x = Tensor([2.0], requires_grad=True)
    (x.detach() * x.detach()).sum().backward()
    assert x.grad is None


def test_constant_graph_has_no_gradients():
    a = Tensor([1.0, 2.0])
    loss = (a * a).sum()
    loss.backward()
    assert a.grad is None


def test_no_grad_builds_no_tape():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        assert not grad_enabled()
        y = x * 3.0
    assert y._parents == ()
    y.backward()
    assert x.grad is None


def test_broadcast_to_gradient_sums():
    x = Tensor(np.ones((3, 1)), requires_grad=True)
    x.broadcast_to((3, 4)).sum().backward()
    assert np.array_equal(x.grad, np.full((3, 1), 4.0))


def test_tape_determinism_bitwise():
    def run():
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        loss = ((a @ b).softmax() * Tensor(rng.normal(size=(6, 4)))).sum()
        loss.backward()
        return a.grad, b.grad

    ga1, gb1 = run()
    ga2, gb2 = run()
    assert np.array_equal(ga1, ga2)
    assert np.array_equal(gb1, gb2)


# -- error paths -----------------------------------------------------------


def test_constructor_rejects_non_finite():
    with pytest.raises(ValueError):
        Tensor([1.0, float("nan")])
    with pytest.raises(ValueError):
        Tensor([float("inf")])


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_broadcasting_between_tensors_rejected():
    # implicit numpy-style broadcast is not part of the contract
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 1))) * Tensor(np.ones((3, 4)))


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_needs_2d():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((4, 4))), Tensor(np.ones((2, 2))))


def test_dropout_rate_range():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        Tensor(np.ones(4)).dropout(1.0, rng)
    with pytest.raises(ValueError):
        Tensor(np.ones(4)).dropout(-0.1, rng)


def test_debug_checks_flag_non_finite_op_output():
    set_debug_checks(True)
    try:
        assert debug_checks_enabled()
        with np.errstate(invalid="ignore"), pytest.raises(ValueError):
            Tensor([-1.0]).log()
    finally:
        set_debug_checks(False)


def test_backward_root_must_be_finite():
    x = Tensor([1e308], requires_grad=True)
    with np.errstate(over="ignore"):
        y = x * 10.0  # overflows to inf without debug checks
    with pytest.raises(ValueError):
        y.backward()


# -- finite-difference protocol --------------------------------------------
# every differentiable op, randomized inputs, central differences at h=1e-5

def _signed_away_from_zero(rng, *shape, lo=0.2, hi=1.2):
    mag = rng.uniform(lo, hi, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(mag * sign, requires_grad=True)


def _case_add(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: ((a + b) * Tensor(w)).sum()


def _case_sub(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: ((a - b) * Tensor(w)).sum()


def _case_mul(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: ((a * b) * Tensor(w)).sum()


def _case_div(rng):
    a = leaf(rng, 3, 4)
    b = Tensor(rng.uniform(0.5, 1.5, (3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: ((a / b) * Tensor(w)).sum()


def _case_scalar_mix(rng):
    a = leaf(rng, 4)
    w = rng.normal(size=4)
    return [a], lambda: (((2.0 * a + 1.5) - a / 4.0).scale(0.7) * Tensor(w)).sum()


def _case_neg(rng):
    a = leaf(rng, 5)
    w = rng.normal(size=5)
    return [a], lambda: ((-a) * Tensor(w)).sum()


def _case_powf(rng):
    a = Tensor(rng.uniform(0.3, 2.0, (3, 3)), requires_grad=True)
    w = rng.normal(size=(3, 3))
    return [a], lambda: (a.powf(1.7) * Tensor(w)).sum()


def _case_relu(rng):
    a = _signed_away_from_zero(rng, 4, 4)
    w = rng.normal(size=(4, 4))
    return [a], lambda: (a.relu() * Tensor(w)).sum()


def _case_sigmoid(rng):
    a = leaf(rng, 3, 4, low=-3.0, high=3.0)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (a.sigmoid() * Tensor(w)).sum()


def _case_exp(rng):
    a = leaf(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (a.exp() * Tensor(w)).sum()


def _case_log(rng):
    a = Tensor(rng.uniform(0.3, 2.5, (3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (a.log() * Tensor(w)).sum()


def _case_softplus(rng):
    a = leaf(rng, 3, 4, low=-3.0, high=3.0)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (a.softplus() * Tensor(w)).sum()


def _case_softmax(rng):
    a = leaf(rng, 3, 5, low=-2.0, high=2.0)
    w = rng.normal(size=(3, 5))
    return [a], lambda: (a.softmax() * Tensor(w)).sum()


def _case_reshape(rng):
    a = leaf(rng, 3, 4)
    w = rng.normal(size=(2, 6))
    return [a], lambda: (a.reshape(2, 6) * Tensor(w)).sum()


def _case_transpose(rng):
    a = leaf(rng, 2, 3, 4)
    w = rng.normal(size=(4, 2, 3))
    return [a], lambda: (a.transpose(2, 0, 1) * Tensor(w)).sum()


def _case_broadcast(rng):
    a = leaf(rng, 3, 1)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (a.broadcast_to((3, 4)) * Tensor(w)).sum()


def _case_getitem(rng):
    a = leaf(rng, 4, 5)
    w = rng.normal(size=(2, 3))
    w2 = rng.normal(size=(2, 5))
    return [a], lambda: ((a[1:3, 0:5:2] * Tensor(w)).sum()
                         + (a[[3, 0]] * Tensor(w2)).sum())


def _case_sum(rng):
    a = leaf(rng, 3, 4)
    w = rng.normal(size=4)
    return [a], lambda: (a.sum(axis=0) * Tensor(w)).sum() + a.sum() * 0.3


def _case_mean(rng):
    a = leaf(rng, 3, 4)
    w = rng.normal(size=(3, 1))
    return [a], lambda: (a.mean(axis=1, keepdims=True) * Tensor(w)).sum()


def _case_matmul(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    return [a, b], lambda: ((a @ b) * Tensor(w)).sum()


def _case_matmul_batched(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 2)
    w = rng.normal(size=(2, 3, 2))
    return [a, b], lambda: ((a @ b) * Tensor(w)).sum()


def _case_conv2d(rng):
    x, k = leaf(rng, 5, 6), leaf(rng, 3, 3)
    w = rng.normal(size=(5, 6))
    return [x, k], lambda: (conv2d(x, k) * Tensor(w)).sum()


def _case_dropout(rng):
    a = leaf(rng, 4, 5)
    w = rng.normal(size=(4, 5))
    # rebuilt generator inside the closure keeps the mask fixed across calls
    return [a], lambda: (a.dropout(0.4, np.random.default_rng(99)) * Tensor(w)).sum()


def _case_composite(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 3)
    w = rng.normal(size=(3, 3))
    return [a, b], lambda: (((a @ b).softmax() + (a @ b).sigmoid())
                            * Tensor(w)).sum()


FD_CASES = [
    _case_add, _case_sub, _case_mul, _case_div, _case_scalar_mix, _case_neg,
    _case_powf, _case_relu, _case_sigmoid, _case_exp, _case_log,
    _case_softplus, _case_softmax, _case_reshape, _case_transpose,
    _case_broadcast, _case_getitem, _case_sum, _case_mean, _case_matmul,
    _case_matmul_batched, _case_conv2d, _case_dropout, _case_composite,
]


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
@pytest.mark.parametrize("case", FD_CASES, ids=lambda c: c.__name__[6:])
def test_gradients_match_finite_differences(case, seed):
    rng = np.random.default_rng(1000 + seed)
    leaves, loss_fn = case(rng)
    assert fd_check(loss_fn, leaves, h=1e-5) < 1e-4


# -- properties --------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5), st.integers(1, 6))
def test_softmax_rows_are_distributions(seed, rows, cols):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-30.0, 30.0, (rows, cols)))
    out = x.softmax().data
    assert np.all(out >= 0.0) and np.all(out <= 1.0)
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 30))
def test_relu_nonnegative_and_idempotent(seed, n):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=n) * 10.0)
    once = x.relu()
    assert np.all(once.data >= 0.0)
    assert np.array_equal(once.relu().data, once.data)
