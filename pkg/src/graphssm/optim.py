"""Named parameters and Adam with bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["Parameter", "Adam", "OptimStateError"]


class OptimStateError(RuntimeError):
    """Optimizer asked to step with missing or inconsistent state."""


class Parameter:
    """A named trainable tensor plus its Adam moment buffers.

    The gradient buffer is allocated up front so a parameter that some loss
    never reaches simply steps with a zero gradient instead of erroring.
    """

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.tensor.grad = np.zeros_like(self.tensor.data)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = np.zeros_like(self.tensor.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


class Adam:
    """Adam (Kingma & Ba) over a list of Parameters.

    update per step t:
        m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g^2
        m_hat = m / (1 - b1^t)      v_hat = v / (1 - b2^t)
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)

    Gradients are zeroed after the step.
    """

    def __init__(self, params: list[Parameter], lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.b1, self.b2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                raise OptimStateError(f"parameter {p.name!r} has no gradient buffer")
            p.m *= self.b1
            p.m += (1.0 - self.b1) * g
            p.v *= self.b2
            p.v += (1.0 - self.b2) * g * g
            m_hat = p.m / c1
            v_hat = p.v / c2
            p.tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
