"""Nesterov SGD, cosine learning-rate schedule and the plain training step."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import NonFiniteError, Tensor


def cosine_lr(step: int, horizon: int, lr0: float) -> float:
    """``lr0 * (1 + cos(pi * step / horizon)) / 2``; reaches 0 at ``step == horizon``."""
    if horizon <= 0:
        return lr0
    t = min(max(step, 0), horizon)
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / horizon))


@dataclass
class OptimizerState:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 4e-5
    nesterov: bool = True
    horizon: int = 0
    label_smoothing: float = 0.1
    step: int = 0
    buffers: dict[int, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return cosine_lr(self.step, self.horizon, self.lr) if self.horizon else self.lr


class SGD:
    """SGD with (Nesterov) momentum and L2 weight decay, PyTorch update convention."""

    def __init__(self, params: Sequence[Tensor], state: OptimizerState | None = None, **hyper):
        self.params = list(params)
        self.state = state or OptimizerState(**hyper)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        s = self.state
        lr = s.current_lr()
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + s.weight_decay * p.data if s.weight_decay else p.grad
            if s.momentum:
                buf = s.buffers.get(i)
                buf = g.copy() if buf is None else s.momentum * buf + g
                s.buffers[i] = buf
                g = g + s.momentum * buf if s.nesterov else buf
            p.data = (p.data - lr * g).astype(p.data.dtype, copy=False)
        s.step += 1
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"momentum.{i}": b for i, b in self.state.buffers.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state.buffers = {int(k.split(".")[1]): np.array(v) for k, v in arrays.items()}


def train_step(model: Callable[[Tensor], Tensor], batch, optimizer: SGD) -> float:
    """One cross-entropy (label-smoothed) step; raises on a non-finite loss."""
    x, y = batch
    optimizer.zero_grad()
    logits = model(x if isinstance(x, Tensor) else Tensor(x))
    loss = F.cross_entropy_label_smoothed(logits, y, optimizer.state.label_smoothing)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss", layer_id=_first_bad(logits))
    loss.backward()
    optimizer.step()
    return value


def _first_bad(t: Tensor) -> str:
    return "logits" if not np.all(np.isfinite(t.data)) else "loss"
