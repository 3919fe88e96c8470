"""Finite-difference audit of every model parameter.

Central differences with step h compare against the tape's gradients at a
generic point: parameters are first nudged off their defaults (several start
at exactly zero, which would leave whole paths without gradient flow and the
comparison vacuous). Dropout is disabled throughout. The relative error uses
a small denominator floor so that near-zero gradients are compared at the
scale finite differences can actually resolve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Model
from .train import cross_entropy

__all__ = ["GradCheckReport", "check_model_gradients", "relative_error"]


def relative_error(fd: float, an: float, floor: float = 1e-6) -> float:
    return abs(fd - an) / max(abs(fd), abs(an), floor)


@dataclass
class GradCheckReport:
    worst: float
    worst_param: str
    per_param: dict[str, float]
    checked: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.worst < self.tolerance


def check_model_gradients(model: Model, patches: np.ndarray, targets: np.ndarray,
                          h: float = 1e-5, tolerance: float = 1e-4,
                          seed: int = 1234) -> GradCheckReport:
    rng = np.random.Generator(np.random.PCG64(seed))
    for p in model.parameters():
        p.tensor.data = p.tensor.data + rng.uniform(-0.2, 0.2, p.tensor.shape)

    def loss_value() -> float:
        return cross_entropy(model.forward(patches), targets).item()

    for p in model.parameters():
        p.zero_grad()
    loss = cross_entropy(model.forward(patches), targets)
    loss.backward()
    analytic = {p.name: p.tensor.grad.copy() for p in model.parameters()}

    per_param: dict[str, float] = {}
    worst, worst_param, checked = 0.0, "", 0
    for p in model.parameters():
        data = p.tensor.data
        flat = data.reshape(-1)
        an_flat = analytic[p.name].reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_value()
            flat[i] = keep - h
            down = loss_value()
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            err = relative_error(fd, an_flat[i])
            if err > worst_here:
                worst_here = err
            checked += 1
        per_param[p.name] = worst_here
        if worst_here > worst:
            worst, worst_param = worst_here, p.name
    return GradCheckReport(worst=worst, worst_param=worst_param,
                           per_param=per_param, checked=checked,
                           tolerance=tolerance)
