"""Full classifier: patch tokens -> stacked encoder/GCN layers -> MLP head.

Per sample, the p x p x D patch flattens row-major into M = p^2 spectral
tokens, each linearly embedded plus a learned position table (zero at init).
Layer l computes

    f   = encoder_block(M_l, M_{l-1})          (M_{-1} := M_0)
    g   = gcn_forward(dropout(layer_norm(f)))
    M_{l+1} = M_l + g W_out

where W_out starts at zero, so every layer is the identity at initialization
and the stack is stable at depth. The norm between the block and the graph
step keeps the residual additions bounded by the weights; without it the
blend's passthrough of the raw running tokens makes each layer's contribution
proportional to the token scale and the stack amplifies itself exponentially
during training. The head layer-norms the center token and
applies a two-layer MLP whose output layer also starts at zero (uniform
logits, initial cross-entropy = ln K).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .encoder import BlockParams, MaskParams, encoder_block, init_block_params, layer_norm
from .graph import HopGraph, build_grid_graph, gcn_forward
from .optim import Parameter
from .ssm import SsmParams
from .tensor import Tensor

__all__ = ["ModelConfig", "Model", "build_model"]


@dataclass
class ModelConfig:
    bands: int
    classes: int
    patch_size: int = 11
    depth: int = 8
    embed_dim: int = 64
    state_dim: int = 16
    hops: int = 2
    gamma: float = 0.2
    dropout: float = 0.1
    mask_enabled: bool = True
    adaptive_filter: bool = True

    def validate(self) -> None:
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and positive, got {self.patch_size}")
        for name in ("bands", "classes", "depth", "embed_dim", "state_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        cfg = ModelConfig(**d)
        cfg.validate()
        return cfg


class Model:
    """Parameter container plus forward pass. Build through ``build_model``."""

    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.graph: HopGraph = build_grid_graph(cfg.patch_size, cfg.hops)
        self.center = (cfg.patch_size * cfg.patch_size - 1) // 2
        self._params: dict[str, Parameter] = {}
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        c, d, k = cfg.embed_dim, cfg.bands, cfg.classes
        m = cfg.patch_size * cfg.patch_size

        def reg(name: str, value: np.ndarray) -> Tensor:
            p = Parameter(name, value)
            self._params[name] = p
            return p.tensor

        def uniform(shape, fan_in):
            s = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-s, s, shape)

        self.w_embed = reg("embed.weight", uniform((d, c), d))
        self.f_pos = reg("embed.position", np.zeros((m, c)))
        self.blocks: list[BlockParams] = []
        self.post_norms: list[tuple[Tensor, Tensor]] = []
        self.gcn_weights: list[Tensor] = []
        self.out_projs: list[Tensor] = []
        for l in range(cfg.depth):
            pre = f"layer{l}."
            blk = BlockParams(
                ln_gain=reg(pre + "ln.gain", np.ones(c)),
                ln_bias=reg(pre + "ln.bias", np.zeros(c)),
                mask=MaskParams(
                    w_r=reg(pre + "mask.w_r", np.ones(c)),
                    w_c=reg(pre + "mask.w_c", np.ones(c)),
                    kernel=reg(pre + "mask.kernel", _delta_kernel()),
                ),
                ssm=SsmParams(
                    a_diag=reg(pre + "ssm.a_diag",
                               -np.tile(np.arange(1.0, cfg.state_dim + 1.0), (c, 1))),
                    w_delta=reg(pre + "ssm.w_delta", uniform((c, c), c)),
                    b_delta=reg(pre + "ssm.b_delta", np.zeros(c)),
                    w_b=reg(pre + "ssm.w_b", uniform((cfg.state_dim, c), c)),
                    w_c=reg(pre + "ssm.w_c", uniform((cfg.state_dim, c), c)),
                ),
                w_gate=reg(pre + "gate.weight", uniform((c, c), c)),
                eps_raw=reg(pre + "blend.eps_raw", np.zeros(1)),
            )
            self.blocks.append(blk)
            self.post_norms.append((reg(pre + "post.gain", np.ones(c)),
                                    reg(pre + "post.bias", np.zeros(c))))
            self.gcn_weights.append(reg(pre + "gcn.weight", uniform((c, c), c)))
            self.out_projs.append(reg(pre + "out.weight", np.zeros((c, c))))
        self.head_gain = reg("head.ln.gain", np.ones(c))
        self.head_bias = reg("head.ln.bias", np.zeros(c))
        self.head_w1 = reg("head.mlp.w1", uniform((c, c), c))
        self.head_b1 = reg("head.mlp.b1", np.zeros(c))
        self.head_w2 = reg("head.mlp.w2", np.zeros((c, k)))
        self.head_b2 = reg("head.mlp.b2", np.zeros(k))

    # -- parameters -------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.data.shape}")
            p.tensor.data = arr.copy()

    # -- forward ----------------------------------------------------------

    def tokens(self, patches: np.ndarray) -> Tensor:
        """Embed [B, p, p, D] patches into [B, M, C] token matrices."""
        b = patches.shape[0]
        m = self.cfg.patch_size ** 2
        flat = Tensor(patches.reshape(b, m, self.cfg.bands))
        emb = flat @ self.w_embed
        return emb + self.f_pos.broadcast_to(emb.shape)

    def forward(self, patches: np.ndarray,
                dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Class logits [B, K]. Pass a generator to enable dropout (training)."""
        if patches.ndim != 4 or patches.shape[1:] != (self.cfg.patch_size,
                                                      self.cfg.patch_size,
                                                      self.cfg.bands):
            raise ValueError(f"expected [B, {self.cfg.patch_size}, "
                             f"{self.cfg.patch_size}, {self.cfg.bands}] patches, "
                             f"got {patches.shape}")
        cur = self.tokens(patches)
        prev = cur
        for blk, (pg, pb), w_gcn, w_out in zip(self.blocks, self.post_norms,
                                               self.gcn_weights, self.out_projs):
            f = encoder_block(cur, prev, blk, mask_enabled=self.cfg.mask_enabled)
            f = layer_norm(f, pg, pb)
            if dropout_rng is not None and self.cfg.dropout > 0.0:
                f = f.dropout(self.cfg.dropout, dropout_rng)
            g = gcn_forward(f, self.graph, w_gcn, gamma=self.cfg.gamma,
                            adaptive=self.cfg.adaptive_filter)
            prev, cur = cur, cur + (g @ w_out)
        center = cur[:, self.center, :]
        z = layer_norm(center, self.head_gain, self.head_bias)
        hidden = (z @ self.head_w1 + self.head_b1.broadcast_to((z.shape[0], self.cfg.embed_dim))).relu()
        return hidden @ self.head_w2 + self.head_b2.broadcast_to((z.shape[0], self.cfg.classes))


def _delta_kernel() -> np.ndarray:
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    return k


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    return Model(cfg, seed)
