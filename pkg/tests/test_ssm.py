"""State-space layer: discretization, scans, selective forward."""

import numpy as np
import pytest
from mpmath import mp

from graphssm import kernels
from graphssm.ssm import (
    TAYLOR_THRESHOLD, SsmParams, combine, discretize_zoh, init_ssm_params,
    scan_parallel, scan_sequential, selective_project, ssm_forward,
)
from graphssm.tensor import Tensor, ShapeError, no_grad

from conftest import fd_check


# -- zero-order-hold discretization ----------------------------------------


def test_zoh_near_zero_state_coefficient():
    a_bar, b_bar = discretize_zoh(1e-12, 2.0, 0.5)
    assert abs(a_bar - 1.0) < 1e-11
    assert abs(b_bar - 1.0) < 1e-11


def test_zoh_tiny_step():
    a_bar, b_bar = discretize_zoh(-1.0, 3.0, 1e-12)
    assert abs(a_bar - 1.0) < 1e-11
    assert abs(b_bar - 3e-12) < 1e-20


def test_zoh_unit_decay():
    a_bar, b_bar = discretize_zoh(-1.0, 1.0, 1.0)
    assert abs(a_bar - np.exp(-1.0)) < 1e-15
    assert abs(b_bar - (1.0 - np.exp(-1.0))) < 1e-15


def test_zoh_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        discretize_zoh(-1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        discretize_zoh(-1.0, 1.0, -0.5)


def test_zoh_matches_high_precision_reference():
    mp.dps = 50
    b = 1.3
    for a in -np.logspace(-10, 1, 12):
        for delta in np.logspace(-8, 0, 9):
            a_bar, b_bar = discretize_zoh(a, b, delta)
            want_a = float(mp.e ** (mp.mpf(delta) * mp.mpf(a)))
            want_b = float(mp.expm1(mp.mpf(delta) * mp.mpf(a)) / mp.mpf(a) * b)
            assert abs(a_bar - want_a) <= 1e-12 * max(1.0, abs(want_a))
            assert abs(b_bar - want_b) <= 1e-12 * max(1.0, abs(want_b))


def test_zoh_series_branch_continuous_at_threshold():
    # one-ulp straddle: the input change is negligible, so any visible jump
    # would be a mismatch between the series and expm1 branches
    a = -1.0
    below = discretize_zoh(a, 1.0, np.nextafter(TAYLOR_THRESHOLD, 0.0))[1]
    above = discretize_zoh(a, 1.0, TAYLOR_THRESHOLD)[1]
    assert abs(below - above) / abs(above) < 1e-9


def test_zoh_broadcasts_like_numpy():
    a = np.array([-1.0, -2.0])
    a_bar, b_bar = discretize_zoh(a, 1.0, 0.5)
    assert a_bar.shape == (2,)
    assert np.allclose(a_bar, np.exp(0.5 * a))


# -- scan elements -----------------------------------------------------------


def test_combine_hand_values():
    a, b = combine((2.0, 3.0), (5.0, 7.0))
    assert a == 10.0 and b == 22.0


def test_combine_associative_on_random_triples():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        e = [(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)) for _ in range(3)]
        left = combine(combine(e[0], e[1]), e[2])
        right = combine(e[0], combine(e[1], e[2]))
        assert np.max(np.abs(left[0] - right[0])) <= 1e-12
        assert np.max(np.abs(left[1] - right[1])) <= 1e-12


def test_scan_sequential_counts():
    n = 17
    out = scan_sequential(np.ones(n), np.ones(n))
    assert np.array_equal(out, np.arange(1.0, n + 1.0))


def test_scan_sequential_resets_when_multiplier_zero():
    rng = np.random.default_rng(0)
    b = rng.normal(size=(9, 3))
    out = scan_sequential(np.zeros((9, 3)), b)
    assert np.array_equal(out, b)


def test_scan_initial_state():
    out = scan_sequential(np.array([2.0]), np.array([3.0]), h0=np.array(5.0))
    assert out[0] == 13.0
    par = scan_parallel(np.array([2.0]), np.array([3.0]), h0=np.array(5.0))
    assert par[0] == 13.0


@pytest.mark.parametrize("length", [1, 2, 3, 7, 8, 64, 1000])
def test_scan_parallel_matches_sequential(length):
    for seed in range(3):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.05, 0.95, (length, 4, 16))
        b = rng.normal(size=(length, 4, 16))
        want = scan_sequential(a, b)
        got = scan_parallel(a, b)
        assert np.max(np.abs(got - want)) <= 1e-10


def test_scan_parallel_worker_count_does_not_change_bits():
    rng = np.random.default_rng(5)
    a = rng.uniform(0.05, 0.95, (513, 6))
    b = rng.normal(size=(513, 6))
    base = scan_parallel(a, b, workers=1)
    for workers in (2, 3, 8):
        assert np.array_equal(scan_parallel(a, b, workers=workers), base)


def test_scan_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        scan_sequential(np.ones((3, 2)), np.ones((3, 3)))
    with pytest.raises(ShapeError):
        scan_parallel(np.ones((0, 2)), np.ones((0, 2)))
    with pytest.raises(ShapeError):
        scan_parallel(np.ones((4, 2)), np.ones((4, 2)), h0=np.ones(3))


def test_scan_stable_over_long_horizons():
    rng = np.random.default_rng(11)
    n = 10_000
    a = rng.uniform(0.05, 0.95, (n, 4))
    b = rng.normal(size=(n, 4))
    out = scan_parallel(a, b)
    assert np.all(np.isfinite(out))
    # geometric decay bounds the reachable state
    bound = np.abs(b).max() / (1.0 - a.max()) + 1e-9
    assert np.max(np.abs(out)) <= bound


# -- selective projections -----------------------------------------------


def _params(rng, channels=3, state=4) -> SsmParams:
    p = init_ssm_params(rng, channels, state)
    for t in (p.a_diag, p.w_delta, p.b_delta, p.w_b, p.w_c):
        t.requires_grad = True
    return p


def test_init_state_matrix_is_negative_ladder():
    p = init_ssm_params(np.random.default_rng(0), 3, 5)
    want = -np.tile(np.arange(1.0, 6.0), (3, 1))
    assert np.array_equal(p.a_diag.data, want)


def test_selective_project_zero_token():
    p = init_ssm_params(np.random.default_rng(0), 4, 6)
    delta, b_k, c_k = selective_project(Tensor(np.zeros(4)), p)
    assert np.allclose(delta.data, np.log(2.0), atol=1e-15)
    assert np.array_equal(b_k.data, np.zeros(6))
    assert np.array_equal(c_k.data, np.zeros(6))


def test_selective_project_matches_straight_line_math():
    rng = np.random.default_rng(3)
    p = init_ssm_params(rng, 5, 7)
    p.b_delta.data[:] = rng.normal(size=5)
    tok = rng.normal(size=(2, 6, 5))
    delta, b_k, c_k = selective_project(Tensor(tok), p)
    pre = tok @ p.w_delta.data.T + p.b_delta.data
    want_delta = np.log1p(np.exp(-np.abs(pre))) + np.maximum(pre, 0.0)
    assert np.max(np.abs(delta.data - want_delta)) <= 1e-12
    assert np.max(np.abs(b_k.data - tok @ p.w_b.data.T)) <= 1e-12
    assert np.max(np.abs(c_k.data - tok @ p.w_c.data.T)) <= 1e-12


# -- full selective forward ------------------------------------------------


def _naive_forward(tokens: np.ndarray, p: SsmParams) -> np.ndarray:
    """Step-by-step reference through discretize_zoh, one state per channel."""
    L, C = tokens.shape
    N = p.state_dim
    pre = tokens @ p.w_delta.data.T + p.b_delta.data
    delta = np.log1p(np.exp(-np.abs(pre))) + np.maximum(pre, 0.0)
    b_seq = tokens @ p.w_b.data.T
    c_seq = tokens @ p.w_c.data.T
    h = np.zeros((C, N))
    y = np.zeros((L, C))
    for l in range(L):
        for c in range(C):
            a_bar, b_bar = discretize_zoh(p.a_diag.data[c], b_seq[l], delta[l, c])
            h[c] = a_bar * h[c] + b_bar * tokens[l, c]
            y[l, c] = c_seq[l] @ h[c]
    return y


def test_forward_zero_input_projection_gives_zero_output():
    rng = np.random.default_rng(1)
    p = init_ssm_params(rng, 3, 4)
    p.w_b.data[:] = 0.0
    tok = rng.normal(size=(5, 3))
    out = ssm_forward(Tensor(tok), p)
    assert np.array_equal(out.data, np.zeros((5, 3)))


def test_forward_single_step_closed_form():
    rng = np.random.default_rng(2)
    p = init_ssm_params(rng, 2, 1)
    tok = rng.normal(size=(1, 2))
    out = ssm_forward(Tensor(tok), p).data
    pre = tok @ p.w_delta.data.T
    delta = np.log1p(np.exp(pre))
    b1 = tok @ p.w_b.data.T
    c1 = tok @ p.w_c.data.T
    for c in range(2):
        _, b_bar = discretize_zoh(p.a_diag.data[c, 0], b1[0, 0], delta[0, c])
        want = c1[0, 0] * b_bar * tok[0, c]
        assert abs(out[0, c] - want) <= 1e-12


def test_forward_matches_naive_reference():
    rng = np.random.default_rng(7)
    p = init_ssm_params(rng, 2, 3)
    tok = rng.normal(size=(6, 2))
    out = ssm_forward(Tensor(tok), p).data
    want = _naive_forward(tok, p)
    assert np.max(np.abs(out - want)) <= 1e-10


def test_forward_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    p = _params(rng, channels=2, state=3)
    tok = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    w = rng.normal(size=(5, 2))
    leaves = [tok, p.a_diag, p.w_delta, p.b_delta, p.w_b, p.w_c]

    def loss():
        return (ssm_forward(tok, p) * Tensor(w)).sum()

    assert fd_check(loss, leaves, h=1e-5) < 1e-4


def test_forward_linear_in_tokens_with_frozen_projections():
    rng = np.random.default_rng(9)
    p = init_ssm_params(rng, 3, 4)
    tok = rng.normal(size=(1, 7, 3))
    with no_grad():
        proj = selective_project(Tensor(tok), p)
        base = ssm_forward(Tensor(tok), p, projections=proj).data
        scaled = ssm_forward(Tensor(2.5 * tok), p, projections=proj).data
    assert np.max(np.abs(scaled - 2.5 * base)) <= 1e-10


def test_forward_batched_matches_single():
    rng = np.random.default_rng(10)
    p = init_ssm_params(rng, 3, 4)
    tok = rng.normal(size=(4, 6, 3))
    batched = ssm_forward(Tensor(tok), p).data
    for b in range(4):
        single = ssm_forward(Tensor(tok[b]), p).data
        assert np.array_equal(batched[b], single)


def test_forward_shape_and_dim_errors():
    p = init_ssm_params(np.random.default_rng(0), 3, 4)
    with pytest.raises(ShapeError):
        ssm_forward(Tensor(np.zeros(3)), p)
    with pytest.raises(ShapeError):
        ssm_forward(Tensor(np.zeros((5, 2))), p)


def test_tracked_and_light_paths_agree_bitwise():
    rng = np.random.default_rng(12)
    p = _params(rng, channels=3, state=4)
    tok = rng.normal(size=(2, 6, 3))
    tracked = ssm_forward(Tensor(tok, requires_grad=True), p).data
    with no_grad():
        light = ssm_forward(Tensor(tok), p).data
    assert np.array_equal(tracked, light)


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="kernels run interpreted")
def test_jit_kernels_match_interpreted_bitwise():
    rng = np.random.default_rng(13)
    B, L, C, N = 2, 9, 3, 4
    A = -rng.uniform(0.5, 3.0, (C, N))
    delta = rng.uniform(0.05, 1.0, (B, L, C))
    Bk = rng.normal(size=(B, L, N))
    Ck = rng.normal(size=(B, L, N))
    x = rng.normal(size=(B, L, C))
    ab = np.exp(delta[:, :, :, None] * A)

    y1 = np.empty((B, L, C)); h1 = np.empty((B, L, C, N))
    y2 = np.empty((B, L, C)); h2 = np.empty((B, L, C, N))
    kernels.ssm_scan_fwd(A, delta, Bk, Ck, x, ab, y1, h1)
    kernels._ssm_scan_fwd(A, delta, Bk, Ck, x, ab, y2, h2)
    assert np.array_equal(y1, y2) and np.array_equal(h1, h2)

    g = rng.normal(size=(B, L, C))
    outs1 = [np.zeros_like(A), np.zeros_like(delta), np.zeros_like(Bk),
             np.zeros_like(Ck), np.zeros_like(x)]
    outs2 = [np.zeros_like(A), np.zeros_like(delta), np.zeros_like(Bk),
             np.zeros_like(Ck), np.zeros_like(x)]
    kernels.ssm_scan_bwd(A, delta, Bk, Ck, x, ab, h1, g, *outs1)
    kernels._ssm_scan_bwd(A, delta, Bk, Ck, x, ab, h2, g, *outs2)
    for got, want in zip(outs1, outs2):
        assert np.array_equal(got, want)
