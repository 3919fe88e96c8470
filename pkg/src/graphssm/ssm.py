"""Selective state-space layer: ZOH discretization, linear scans, forward.

The continuous per-channel state h'(t) = a h(t) + b x(t), y = c h is stepped
with a zero-order hold over input-dependent step sizes. Each step contributes
a pair (a_bar, b_bar x) to the affine recurrence

    h_k = a_bar_k * h_{k-1} + b_bar_k * x_k

which is associative under

    (a1, b1) o (a2, b2) = (a2 a1, a2 b1 + b2)

so it can be evaluated either sequentially or by a work-efficient pairwise
tree (``scan_parallel``). Both orderings agree to ~1e-10 and the test suite
holds them to that.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, ShapeError, custom_op, grad_enabled

__all__ = [
    "discretize_zoh",
    "combine",
    "scan_sequential",
    "scan_parallel",
    "SsmParams",
    "init_ssm_params",
    "selective_project",
    "ssm_forward",
]

TAYLOR_THRESHOLD = kernels.TAYLOR_THRESHOLD


def discretize_zoh(a, b, delta):
    """Zero-order-hold discretization of h' = a h + b x over step ``delta``.

    Returns ``(a_bar, b_bar)`` with a_bar = e^{delta a} and
    b_bar = (e^{delta a} - 1)/a * b, evaluated through expm1 so the
    cancellation-prone region keeps full precision. Below
    |delta a| < 1e-6 the third-order series delta*b*(1 + u/2 + u^2/6)
    takes over (continuous at the threshold to well under 1e-9).

    Inputs broadcast like numpy arrays; ``delta`` must be positive.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("discretize_zoh requires delta > 0")
    u = delta * a
    a_bar = np.exp(u)
    small = np.abs(u) < TAYLOR_THRESHOLD
    a_safe = np.where(small, 1.0, a)
    main = np.expm1(u) / a_safe * b
    series = delta * b * (1.0 + 0.5 * u + u * u / 6.0)
    b_bar = np.where(small, series, main)
    return a_bar, b_bar


def combine(e1, e2):
    """Compose two scan elements: apply e1 first, then e2."""
    a1, b1 = e1
    a2, b2 = e2
    return a2 * a1, a2 * b1 + b2


def _check_scan_args(a: np.ndarray, b: np.ndarray, h0):
    if a.shape != b.shape:
        raise ShapeError(f"scan: multiplier shape {a.shape} != offset shape {b.shape}")
    if a.ndim < 1 or a.shape[0] < 1:
        raise ShapeError("scan needs a non-empty leading sequence axis")
    if h0 is not None:
        h0 = np.asarray(h0, dtype=np.float64)
        if h0.shape != a.shape[1:]:
            raise ShapeError(f"scan: h0 shape {h0.shape} != element shape {a.shape[1:]}")
    return h0


def scan_sequential(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Ground-truth recurrence h_k = a_k h_{k-1} + b_k over axis 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    h0 = _check_scan_args(a, b, h0)
    out = np.empty_like(b)
    state = np.zeros(a.shape[1:]) if h0 is None else h0
    for k in range(a.shape[0]):
        state = a[k] * state + b[k]
        out[k] = state
    return out


def _scan_tree(a: np.ndarray, b: np.ndarray, workers: int, pool) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive composition scan via pairwise contraction.

    Level step: combine elements (2i, 2i+1) into half-size arrays, scan those
    recursively (giving the prefixes ending at odd positions), then fill even
    positions with one more combine. The combine tree is a pure function of
    the length, so worker count cannot change the result.
    """
    L = a.shape[0]
    if L == 1:
        return a.copy(), b.copy()
    m = L // 2
    lo_a, hi_a = a[0:2 * m:2], a[1:2 * m:2]
    lo_b, hi_b = b[0:2 * m:2], b[1:2 * m:2]
    ca = np.empty_like(lo_a)
    cb = np.empty_like(lo_b)

    def pair_chunk(s, e):
        np.multiply(hi_a[s:e], lo_a[s:e], out=ca[s:e])
        np.multiply(hi_a[s:e], lo_b[s:e], out=cb[s:e])
        cb[s:e] += hi_b[s:e]

    _run_chunks(pair_chunk, m, workers, pool)
    sa, sb = _scan_tree(ca, cb, workers, pool)

    out_a = np.empty_like(a)
    out_b = np.empty_like(b)
    out_a[1:2 * m:2] = sa
    out_b[1:2 * m:2] = sb
    out_a[0] = a[0]
    out_b[0] = b[0]
    # even position 2i (i >= 1) extends the prefix ending at 2i-1
    n_even = (L - 1) // 2 if L % 2 == 1 else m - 1
    if n_even > 0:
        ea = a[2:2 * n_even + 2:2]
        eb = b[2:2 * n_even + 2:2]

        def even_chunk(s, e):
            np.multiply(ea[s:e], sa[s:e], out=out_a[2 + 2 * s:2 + 2 * e:2])
            out_b[2 + 2 * s:2 + 2 * e:2] = ea[s:e] * sb[s:e] + eb[s:e]

        _run_chunks(even_chunk, n_even, workers, pool)
    return out_a, out_b


def _run_chunks(fn, length, workers, pool):
    if pool is None or workers <= 1 or length < 2 * workers:
        fn(0, length)
        return
    step = (length + workers - 1) // workers
    futures = [pool.submit(fn, s, min(s + step, length))
               for s in range(0, length, step)]
    for f in futures:
        f.result()


def scan_parallel(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None,
                  workers: int = 1) -> np.ndarray:
    """Pairwise-tree evaluation of the same recurrence as scan_sequential.

    ``workers`` > 1 splits each level's vectorized combines across a thread
    pool; the combine tree itself is fixed, so any worker count gives the
    same bits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    h0 = _check_scan_args(a, b, h0)
    pool = None
    try:
        if workers > 1:
            pool = ThreadPoolExecutor(max_workers=workers)
        sa, sb = _scan_tree(a, b, workers, pool)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    if h0 is None:
        return sb
    return sa * h0 + sb


@dataclass
class SsmParams:
    """Selective-SSM weights for one layer.

    a_diag [C,N] diagonal continuous-time state matrix per channel;
    w_delta [C,C] + b_delta [C] produce the per-channel step size through a
    softplus; w_b and w_c [N,C] produce the per-step input and output
    projections shared across channels.
    """

    a_diag: Tensor
    w_delta: Tensor
    b_delta: Tensor
    w_b: Tensor
    w_c: Tensor

    @property
    def channels(self) -> int:
        return self.a_diag.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_diag.shape[1]


def init_ssm_params(rng: np.random.Generator, channels: int, state_dim: int) -> SsmParams:
    """Fresh weights: S4D-style real ladder a[c,n] = -(1+n), fan-in uniform
    projections, zero delta bias (softplus(0) = ln 2 at a zero token)."""
    scale = 1.0 / np.sqrt(channels)
    a = -np.tile(np.arange(1.0, state_dim + 1.0), (channels, 1))
    return SsmParams(
        a_diag=Tensor(a),
        w_delta=Tensor(rng.uniform(-scale, scale, (channels, channels))),
        b_delta=Tensor(np.zeros(channels)),
        w_b=Tensor(rng.uniform(-scale, scale, (state_dim, channels))),
        w_c=Tensor(rng.uniform(-scale, scale, (state_dim, channels))),
    )


def selective_project(tokens: Tensor, params: SsmParams):
    """Input-dependent step/input/output projections.

    tokens [..., C] -> delta [..., C] (positive), b_k [..., N], c_k [..., N].
    """
    single = tokens.ndim == 1
    if single:
        tokens = tokens.reshape(1, -1)
    pre = tokens @ params.w_delta.transpose()
    delta = (pre + params.b_delta.broadcast_to(pre.shape)).softplus()
    b_k = tokens @ params.w_b.transpose()
    c_k = tokens @ params.w_c.transpose()
    if single:
        delta, b_k, c_k = delta[0], b_k[0], c_k[0]
    return delta, b_k, c_k


def _selective_scan_op(a_diag: Tensor, delta: Tensor, b_seq: Tensor,
                       c_seq: Tensor, x: Tensor) -> Tensor:
    """Tape node wrapping the fused kernel. All batch-major [B,L,*].

    The decay factors exp(delta*A) come from one vectorized numpy pass and
    are handed to the kernel; training retains them (plus the state history)
    so the backward sweep is transcendental-free, inference uses the
    rolling-state kernel and keeps nothing.
    """
    A = a_diag.data
    B, L, C = delta.shape
    N = A.shape[1]
    y = np.empty((B, L, C))
    ab = delta.data[:, :, :, None] * A
    np.exp(ab, out=ab)
    tracked = grad_enabled() and any(t.requires_grad or t._parents
                                     for t in (a_diag, delta, b_seq, c_seq, x))
    if tracked:
        h = np.empty((B, L, C, N))
        kernels.ssm_scan_fwd(A, delta.data, b_seq.data, c_seq.data, x.data,
                             ab, y, h)

        def vjp(g):
            dA = np.zeros_like(A)
            dd = np.zeros_like(delta.data)
            dB = np.zeros_like(b_seq.data)
            dC = np.zeros_like(c_seq.data)
            dx = np.zeros_like(x.data)
            kernels.ssm_scan_bwd(A, delta.data, b_seq.data, c_seq.data, x.data,
                                 ab, h, np.ascontiguousarray(g),
                                 dA, dd, dB, dC, dx)
            return (dA, dd, dB, dC, dx)

        return custom_op(y, (a_diag, delta, b_seq, c_seq, x), vjp)
    kernels.ssm_scan_fwd_light(A, delta.data, b_seq.data, c_seq.data, x.data,
                               ab, y)
    return custom_op(y, (a_diag, delta, b_seq, c_seq, x), None)


def ssm_forward(tokens: Tensor, params: SsmParams, projections=None) -> Tensor:
    """Run the selective SSM over a token sequence.

    ``tokens`` is [L, C] or [B, L, C] with the sequence on axis -2. Each step
    is discretized with its own delta/B/C from ``selective_project`` (or from
    ``projections=(delta, b_seq, c_seq)`` to freeze them, e.g. for linearity
    checks) and the recurrence runs through the fused kernel with the
    sequential reverse sweep for gradients. Output shape matches the input.
    """
    if tokens.ndim not in (2, 3):
        raise ShapeError(f"ssm_forward expects [L,C] or [B,L,C], got {tokens.shape}")
    if tokens.shape[-1] != params.channels:
        raise ShapeError(f"token dim {tokens.shape[-1]} != params channels {params.channels}")
    single = tokens.ndim == 2
    if single:
        tokens = tokens.reshape(1, *tokens.shape)
    if projections is None:
        delta, b_seq, c_seq = selective_project(tokens, params)
    else:
        delta, b_seq, c_seq = projections
        if delta.shape != tokens.shape:
            raise ShapeError("frozen delta shape mismatch")
    y = _selective_scan_op(params.a_diag, delta, b_seq, c_seq, tokens)
    if single:
        y = y.reshape(y.shape[1], y.shape[2])
    return y
