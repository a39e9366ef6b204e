"""Central finite differences, used as the independent oracle for analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Estimate ``df/dx`` elementwise with ``(f(x+h) - f(x-h)) / 2h``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Compare analytic and numeric gradients of ``sum(fn(*inputs) * probe)``.

    A fixed random probe turns a tensor-valued ``fn`` into a scalar so every
    output element contributes. Returns one relative error per input.
    """
    inputs = [np.array(a, dtype=np.float64) for a in inputs]
    out_shape = fn(*[Tensor(a) for a in inputs]).shape
    probe = np.random.default_rng(seed).normal(size=out_shape)

    tensors = [Tensor(a, requires_grad=True) for a in inputs]
    (fn(*tensors) * Tensor(probe)).sum().backward()

    errors = []
    for i, t in enumerate(tensors):
        def scalar(v, i=i):
            args = [Tensor(a) for a in inputs]
            args[i] = Tensor(v)
            return float((fn(*args).data * probe).sum())

        numeric = finite_difference_gradient(scalar, inputs[i], step)
        analytic = t.grad if t.grad is not None else np.zeros_like(inputs[i])
        errors.append(relative_error(analytic, numeric))
    return errors
