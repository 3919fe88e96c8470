"""Symbolic cost model plus an instrumented op count for the scan path.

Symbolic counts follow the architecture's published cost accounting, with
n the token-sequence length, p the patch pixel count, d the feature width
and |E| the directed edge count of the patch graph:

    mask:  2 n p^2 d
    ssm:   3 p (2d) n + p (2d) n
    gcn:   |E| p^2 d

The measured number comes from an instrumented pure-numpy run of the
selective-scan pipeline (projections, softplus, discretization, recurrence,
readout) that tallies every multiply/add it performs; it grows linearly in
the sequence length.
"""

from __future__ import annotations

import numpy as np

from .graph import build_grid_graph
from .model import ModelConfig
from .ssm import discretize_zoh

__all__ = ["OpCounter", "symbolic_flops", "instrumented_ssm_ops", "count_flops"]


class OpCounter:
    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


def symbolic_flops(n: int, p: int, d: int, edges: int) -> dict[str, int]:
    return {
        "mask": 2 * n * p * p * d,
        "ssm": 3 * p * (2 * d) * n + p * (2 * d) * n,
        "gcn": edges * p * p * d,
    }


def instrumented_ssm_ops(seq_len: int, channels: int, state_dim: int,
                         seed: int = 0, counter: OpCounter | None = None) -> int:
    """Run the scan pipeline on random tokens, counting scalar mul/adds."""
    counter = counter or OpCounter()
    rng = np.random.Generator(np.random.PCG64(seed))
    tokens = rng.uniform(0.0, 1.0, (seq_len, channels))
    scale = 1.0 / np.sqrt(channels)
    w_delta = rng.uniform(-scale, scale, (channels, channels))
    b_delta = np.zeros(channels)
    w_b = rng.uniform(-scale, scale, (state_dim, channels))
    w_c = rng.uniform(-scale, scale, (state_dim, channels))
    a_diag = -np.tile(np.arange(1.0, state_dim + 1.0), (channels, 1))

    l, c, n = seq_len, channels, state_dim
    pre = tokens @ w_delta.T + b_delta
    counter.add(2 * l * c * c + l * c)
    delta = np.log1p(np.exp(-np.abs(pre))) + np.maximum(pre, 0.0)
    counter.add(4 * l * c)
    b_seq = tokens @ w_b.T
    counter.add(2 * l * n * c)
    c_seq = tokens @ w_c.T
    counter.add(2 * l * n * c)
    a_bar, b_bar = discretize_zoh(a_diag[None, :, :], 1.0,
                                  delta[:, :, None])
    counter.add(6 * l * c * n)
    offs = b_bar * b_seq[:, None, :] * tokens[:, :, None]
    counter.add(2 * l * c * n)
    h = np.empty_like(offs)
    state = np.zeros((c, n))
    for k in range(l):
        state = a_bar[k] * state + offs[k]
        h[k] = state
    counter.add(2 * l * c * n)
    y = (c_seq[:, None, :] * h).sum(axis=2)
    counter.add(2 * l * c * n)
    assert y.shape == (l, c)
    return counter.total


def count_flops(cfg: ModelConfig, seq_len: int, seed: int = 0) -> dict:
    """Symbolic trio evaluated at the model's dims, plus the measured count.

    ``ratio`` is measured over symbolic ssm; both scale linearly in
    ``seq_len`` so the ratio is roughly constant in it.
    """
    p = cfg.patch_size * cfg.patch_size
    edges = int(build_grid_graph(cfg.patch_size, 1).base.sum())
    symbolic = symbolic_flops(seq_len, p, cfg.embed_dim, edges)
    measured = instrumented_ssm_ops(seq_len, cfg.embed_dim, cfg.state_dim, seed)
    return {
        "seq_len": seq_len,
        "symbolic": symbolic,
        "measured_ssm_ops": measured,
        "ratio_measured_to_symbolic_ssm": measured / symbolic["ssm"],
    }
