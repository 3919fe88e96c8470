"""Shared test helpers: central-difference gradient checking."""

import numpy as np

from graphssm.tensor import Tensor, no_grad


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_check(loss_fn, leaves, h: float = 1e-5, rng: np.random.Generator | None = None,
             max_entries: int | None = None) -> float:
    """Worst relative error between backward() and central differences.

    ``loss_fn`` rebuilds the graph from the same leaf tensors on every call
    and returns a scalar Tensor; leaf ``.data`` is perturbed in place for the
    difference quotients. Checks every entry of every leaf unless
    ``max_entries`` caps the per-leaf count (sampled without replacement).
    """
    for t in leaves:
        t.grad = None
    loss_fn().backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
             for t in leaves]
    worst = 0.0
    for t, g in zip(leaves, grads):
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            assert rng is not None, "max_entries needs an rng"
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            with no_grad():
                flat[i] = keep + h
                up = loss_fn().item()
                flat[i] = keep - h
                down = loss_fn().item()
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            worst = max(worst, rel_err(fd, gflat[i]))
    return worst


def leaf(rng: np.random.Generator, *shape, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)
