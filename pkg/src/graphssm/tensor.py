"""float64 tensors with a reverse-mode autodiff tape.

Every value in the model lives in one of these. Design points, in order of
importance: correctness (each op ships its own vector-Jacobian product and is
checked against central differences in the test suite), determinism (the tape
is swept in reverse creation order, so two backward passes over the same graph
produce bitwise-identical gradients), and simplicity (no broadcasting between
two tensors except scalar-with-tensor; shape adaptation is explicit via
``reshape`` / ``broadcast_to``).

Gradients accumulate into ``.grad`` on leaf tensors created with
``requires_grad=True``. Intermediate gradients live only for the duration of
the sweep. ``no_grad()`` suppresses tape construction entirely; evaluation
runs under it.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "TapeError",
    "no_grad",
    "grad_enabled",
    "set_debug_checks",
    "debug_checks_enabled",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class TapeError(RuntimeError):
    """The autodiff tape is in a state backward() cannot work with."""


_tape_counter = itertools.count()
_grad_enabled = True
_debug_checks = False


@contextlib.contextmanager
def no_grad():
    """Context manager: ops inside build no tape (pure forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_debug_checks(enabled: bool) -> None:
    """Toggle finiteness validation of every op output (slow; tests use it)."""
    global _debug_checks
    _debug_checks = enabled


def debug_checks_enabled() -> bool:
    return _debug_checks


def _require_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {where}")


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 ndarray plus optional tape bookkeeping.

    ``_parents`` are the input tensors of the op that produced this node and
    ``_vjp`` maps the incoming gradient to one gradient array per parent
    (``None`` for parents that need none). Leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_tape_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        _require_finite(self.data, "tensor construction")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._tape_id = next(_tape_counter)

    # -- construction of op results ------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._tape_id = next(_tape_counter)
        if _debug_checks:
            _require_finite(data, "op output")
        tracked = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
        if tracked:
            for p in parents:
                # a parent created after its child would mean a cycle
                if p._tape_id >= out._tape_id:
                    raise TapeError("tape ordering violated (cycle)")
            out.requires_grad = False
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    # -- basics ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """The underlying buffer (not a copy; do not mutate tracked tensors)."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tape_id={self._tape_id})"

    # -- elementwise arithmetic ------------------------------------------
    # Two-tensor ops demand identical shapes; scalars (python numbers or
    # 0-d/1-element tensors used via .item()) ride along for free.

    @staticmethod
    def _check_same_shape(a: "Tensor", b: "Tensor", op: str) -> None:
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ "
                             "(broadcasting between tensors is not supported; "
                             "use broadcast_to)")

    def __add__(self, other):
        if isinstance(other, Tensor):
            Tensor._check_same_shape(self, other, "add")
            return Tensor._from_op(self.data + other.data, (self, other),
                                   lambda g: (g, g))
        c = float(other)
        return Tensor._from_op(self.data + c, (self,), lambda g: (g,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            Tensor._check_same_shape(self, other, "sub")
            return Tensor._from_op(self.data - other.data, (self, other),
                                   lambda g: (g, -g))
        c = float(other)
        return Tensor._from_op(self.data - c, (self,), lambda g: (g,))

    def __rsub__(self, other):
        c = float(other)
        return Tensor._from_op(c - self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            Tensor._check_same_shape(self, other, "mul")
            a, b = self, other
            return Tensor._from_op(a.data * b.data, (a, b),
                                   lambda g: (g * b.data, g * a.data))
        c = float(other)
        return Tensor._from_op(self.data * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            Tensor._check_same_shape(self, other, "div")
            a, b = self, other
            def vjp(g):
                inv = 1.0 / b.data
                return (g * inv, -g * a.data * inv * inv)
            return Tensor._from_op(a.data / b.data, (a, b), vjp)
        c = float(other)
        return self * (1.0 / c)

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def scale(self, c: float) -> "Tensor":
        """Multiply by a python scalar (alias for ``self * c``)."""
        return self * float(c)

    def powf(self, p: float) -> "Tensor":
        """Elementwise power with a constant float exponent."""
        p = float(p)
        a = self
        out_data = a.data ** p
        return Tensor._from_op(out_data, (a,),
                               lambda g: (g * p * a.data ** (p - 1.0),))

    # -- nonlinearities ---------------------------------------------------

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0
        return Tensor._from_op(np.where(mask, a.data, 0.0), (a,),
                               lambda g: (g * mask,))

    def sigmoid(self) -> "Tensor":
        # stable in both tails: exp of a non-positive argument only
        x = self.data
        t = np.exp(-np.abs(x))
        p = 1.0 / (1.0 + t)
        out = np.where(x >= 0, p, 1.0 - p)
        return Tensor._from_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self
        return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))

    def softplus(self) -> "Tensor":
        # log(1 + e^x) without overflow: max(x, 0) + log1p(e^-|x|)
        x = self.data
        pos = x >= 0
        t = np.exp(-np.abs(x))
        out = np.maximum(x, 0.0) + np.log1p(t)

        def vjp(g):
            # derivative is sigmoid(x), rebuilt from the cached exp
            p = 1.0 / (1.0 + t)
            return (g * np.where(pos, p, 1.0 - p),)

        return Tensor._from_op(out, (self,), vjp)

    def softmax(self) -> "Tensor":
        """Row softmax over the last axis. Rows sum to 1 exactly as computed."""
        x = self.data
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            return ((g - dot) * out,)

        return Tensor._from_op(out, (self,), vjp)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape
        return Tensor._from_op(a.data.reshape(shape), (a,),
                               lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        a = self
        return Tensor._from_op(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                               lambda g: (np.ascontiguousarray(g.transpose(inv)),))

    def broadcast_to(self, shape) -> "Tensor":
        """Explicit numpy-style broadcast; gradient sums over expanded axes."""
        shape = tuple(shape)
        a = self
        out = np.broadcast_to(a.data, shape)
        in_shape = a.shape

        def vjp(g):
            return (_reduce_to_shape(g, in_shape),)

        # materialize so downstream in-place-free math sees a normal array
        return Tensor._from_op(np.ascontiguousarray(out), (a,), vjp)

    def __getitem__(self, idx) -> "Tensor":
        a = self
        out = a.data[idx]
        if isinstance(out, np.ndarray):
            out = np.ascontiguousarray(out)
        else:
            out = np.asarray(out)

        def vjp(g):
            buf = np.zeros_like(a.data)
            buf[idx] = g
            return (buf,)

        return Tensor._from_op(out, (a,), vjp)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)
        out = np.asarray(out)
        in_shape = a.shape

        def vjp(g):
            gg = np.asarray(g)
            if axis is None:
                return (np.broadcast_to(gg, in_shape).copy(),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                for d in sorted(a_norm(ax, len(in_shape))):
                    gg = np.expand_dims(gg, d)
            return (np.broadcast_to(gg, in_shape).copy(),)

        return Tensor._from_op(out, (a,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for d in ax:
                n *= self.shape[d]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- contraction --------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # -- regularization ------------------------------------------------------

    def dropout(self, p: float, rng: np.random.Generator) -> "Tensor":
        """Inverted dropout; identity when p == 0. Caller disables at eval."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate {p} outside [0, 1)")
        if p == 0.0:
            return self
        keep = (rng.random(self.shape) >= p) / (1.0 - p)
        return Tensor._from_op(self.data * keep, (self,), lambda g: (g * keep,))

    # -- backward -------------------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse sweep from this node in reverse creation order.

        ``seed`` defaults to ones (ordinarily this node is a scalar loss).
        Gradients of leaf tensors with ``requires_grad`` accumulate into
        ``.grad``; call again without zeroing and they add up.
        """
        _require_finite(self.data, "backward root")
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = _as_f64(seed)
            if seed.shape != self.shape:
                raise ShapeError("backward seed shape mismatch")

        # collect the reachable subgraph
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            topo.append(node)
            stack.extend(p for p in node._parents if id(p) not in seen)
        topo.sort(key=lambda t: t._tape_id)

        grads: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg


def a_norm(axes: Iterable[int], ndim: int) -> tuple[int, ...]:
    return tuple(d % ndim for d in axes)


def _reduce_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if gd != sd)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return np.ascontiguousarray(g.reshape(shape))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-d by 2-d, or stacked batches numpy-style.

    Inner dimensions must agree; anything else raises before computing.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        bd, ad = b.data, a.data
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return (_reduce_to_shape(ga, a.shape), _reduce_to_shape(gb, b.shape))

    return Tensor._from_op(out, (a, b), vjp)


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-size 2-d convolution with zero padding and no bias.

    ``x`` is ``[..., h, w]`` (leading dims batch), ``kernel`` is ``[kh, kw]``
    with odd sides. Implemented as a sum of shifted slices, which keeps the
    backward rule a mirror image of the forward.
    """
    if kernel.ndim != 2:
        raise ShapeError(f"conv2d kernel must be 2-d, got {kernel.shape}")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d kernel sides must be odd")
    if x.ndim < 2:
        raise ShapeError("conv2d input must be at least 2-d")
    h, w = x.shape[-2], x.shape[-1]
    ph, pw = kh // 2, kw // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    kd = kernel.data
    for i in range(kh):
        for j in range(kw):
            out += kd[i, j] * xp[..., i:i + h, j:j + w]

    def vjp(g):
        gk = np.zeros_like(kd)
        for i2 in range(kh):
            for j2 in range(kw):
                gk[i2, j2] = (g * xp[..., i2:i2 + h, j2:j2 + w]).sum()
        gxp = np.zeros_like(xp)
        for i2 in range(kh):
            for j2 in range(kw):
                gxp[..., i2:i2 + h, j2:j2 + w] += kd[i2, j2] * g
        gx = gxp[..., ph:ph + h, pw:pw + w]
        return (np.ascontiguousarray(gx), gk)

    return Tensor._from_op(out, (x, kernel), vjp)


def custom_op(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap an externally computed forward result as a tape node.

    Used by fused kernels that compute several math steps in one pass and
    supply a hand-derived vector-Jacobian product.
    """
    return Tensor._from_op(np.asarray(data, dtype=np.float64), parents, vjp)
