"""Encoder block: spectral mask -> selective SSM -> gate -> residual blend.

The block consumes the current token matrix and the previous layer's, both
[..., M, D]:

    x  = layer_norm(current)
    s  = spectral_mask(x)          (skippable for ablations)
    y  = ssm_forward(s)
    z  = sigmoid(x W_gate^T) * y
    out = eps * z + (1 - eps) * previous       eps = sigmoid(eps_raw)

With the mask weights at zero the masked tokens vanish, the SSM of a zero
sequence is zero, and the block collapses to (1 - eps) * previous exactly;
the tests pin that identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ssm import SsmParams, init_ssm_params, ssm_forward
from .tensor import Tensor, ShapeError, conv2d, custom_op

__all__ = [
    "MaskParams",
    "BlockParams",
    "init_mask_params",
    "init_block_params",
    "layer_norm",
    "spectral_mask",
    "adaptive_residual",
    "encoder_block",
]


@dataclass
class MaskParams:
    """Spectral mask weights: two band-reweighting vectors [D] and a 3x3
    biasless conv kernel smoothing the D x D profile outer product."""

    w_r: Tensor
    w_c: Tensor
    kernel: Tensor


@dataclass
class BlockParams:
    ln_gain: Tensor
    ln_bias: Tensor
    mask: MaskParams
    ssm: SsmParams
    w_gate: Tensor
    eps_raw: Tensor


def init_mask_params(dim: int) -> MaskParams:
    # neutral start: unit reweighting, identity kernel
    kernel = np.zeros((3, 3))
    kernel[1, 1] = 1.0
    return MaskParams(w_r=Tensor(np.ones(dim)), w_c=Tensor(np.ones(dim)),
                      kernel=Tensor(kernel))


def init_block_params(rng: np.random.Generator, dim: int, state_dim: int) -> BlockParams:
    scale = 1.0 / np.sqrt(dim)
    return BlockParams(
        ln_gain=Tensor(np.ones(dim)),
        ln_bias=Tensor(np.zeros(dim)),
        mask=init_mask_params(dim),
        ssm=init_ssm_params(rng, dim, state_dim),
        w_gate=Tensor(rng.uniform(-scale, scale, (dim, dim))),
        eps_raw=Tensor(np.zeros(1)),
    )


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Fused into a single tape node: the composite would add ten ops per call
    and this sits in every block of every layer.
    """
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} "
                         f"do not match feature dim {x.shape[-1]}")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = np.sum(g * xhat, axis=lead)
        dbias = np.sum(g, axis=lead)
        dxhat = g * gain.data
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        dx = inv * (dxhat - s1 / d - xhat * (s2 / d))
        return (dx, dgain, dbias)

    return custom_op(out, (x, gain, bias), vjp)


def spectral_mask(s: Tensor, params: MaskParams) -> Tensor:
    """Reweight token features through a learned band-by-band mask.

    The token-mean spectrum is reweighted twice (w_r, w_c), their outer
    product is smoothed by a zero-padded 3x3 conv with no bias, and the
    resulting D x D mask right-multiplies the tokens: out = S M^T. Linear in
    S once the profiles are fixed, and identically zero when either
    reweighting vector is zero.
    """
    if s.ndim < 2:
        raise ShapeError(f"spectral_mask expects [..., M, D], got {s.shape}")
    d = s.shape[-1]
    if params.w_r.shape != (d,):
        raise ShapeError(f"mask profile dim {params.w_r.shape} != band dim {d}")
    smean = s.mean(axis=-2)                       # [..., D]
    r = smean * params.w_r.broadcast_to(smean.shape)
    c = smean * params.w_c.broadcast_to(smean.shape)
    lead = s.shape[:-2]
    outer = (r.reshape(*lead, d, 1).broadcast_to((*lead, d, d))
             * c.reshape(*lead, 1, d).broadcast_to((*lead, d, d)))
    mask = conv2d(outer, params.kernel)           # [..., D, D]
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead))
    return s @ mask.transpose(axes)


def adaptive_residual(current: Tensor, previous: Tensor, eps_raw: Tensor) -> Tensor:
    """Learned convex blend eps*current + (1-eps)*previous, eps = sigmoid."""
    if current.shape != previous.shape:
        raise ShapeError(f"residual shapes differ: {current.shape} vs {previous.shape}")
    if eps_raw.size != 1:
        raise ShapeError("eps_raw must hold a single scalar")
    eps = eps_raw.sigmoid().reshape(*([1] * current.ndim)).broadcast_to(current.shape)
    return current * eps + previous * (1.0 - eps)


def encoder_block(current: Tensor, previous: Tensor, params: BlockParams,
                  mask_enabled: bool = True) -> Tensor:
    """One masked selective-SSM block; see the module docstring for the wiring."""
    x = layer_norm(current, params.ln_gain, params.ln_bias)
    s = spectral_mask(x, params.mask) if mask_enabled else x
    y = ssm_forward(s, params.ssm)
    gate = (x @ params.w_gate.transpose()).sigmoid()
    return adaptive_residual(y * gate, previous, params.eps_raw)
