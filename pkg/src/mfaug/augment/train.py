"""Joint target/augmented training, block mutation and depth phase-out."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..tensor import SGD, ConfigurationError, NonFiniteError, Tensor
from ..tensor import functional as F
from .model import AugModel
from .reorder import reorder_weights


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 4e-5
    label_smoothing: float = 0.1
    alpha1: float = 1.0
    alpha2: float = 1.0
    augment: bool = True  # False: train the target path alone
    reorder: bool = True
    mutation: tuple[float, float] | None = None  # (start, stop) fractions of all steps
    flip_augmented: bool = True  # random horizontal flips of training images
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    loss_target: float
    loss_aug: float
    accuracy: float
    lr: float
    wall_time: float


@dataclass
class TrainState:
    model: AugModel
    optimizer: SGD
    config: TrainConfig
    epoch: int = 0
    steps_per_epoch: int = 1
    history: list[EpochRecord] = field(default_factory=list)
    flip_steps: list[int] = field(default_factory=list)

    @property
    def total_steps(self) -> int:
        return self.config.epochs * self.steps_per_epoch


def make_optimizer(model: AugModel, cfg: TrainConfig, total_steps: int) -> SGD:
    return SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
               nesterov=True, horizon=total_steps, label_smoothing=cfg.label_smoothing)


def joint_step(model: AugModel, batch, optimizer: SGD, alpha1: float = 1.0,
               alpha2: float = 1.0) -> tuple[float, float]:
    """One update on ``alpha1 * L(target) + alpha2 * L(augmented)``.

    The two losses are backpropagated separately into the same ``.grad``
    buffers, so each shared weight receives exactly the sum of both
    contributions. With ``alpha2 == 0`` the augmented pass is skipped.
    """
    x, y = batch
    x = x if isinstance(x, Tensor) else Tensor(x)
    eps = optimizer.state.label_smoothing
    optimizer.zero_grad()
    loss_t = F.cross_entropy_label_smoothed(model(x, augmented=False), y, eps)
    lt = float(loss_t.data)
    if not math.isfinite(lt):
        raise NonFiniteError("non-finite target loss", layer_id="loss_target")
    if alpha1:
        loss_t.backward(np.asarray(alpha1, dtype=loss_t.dtype))
    la = lt
    if alpha2:
        loss_a = F.cross_entropy_label_smoothed(model(x, augmented=True), y, eps)
        la = float(loss_a.data)
        if not math.isfinite(la):
            raise NonFiniteError("non-finite augmented loss", layer_id="loss_aug")
        loss_a.backward(np.asarray(alpha2, dtype=loss_a.dtype))
    optimizer.step()
    return lt, la


def flip_schedule(n_units: int, start: float, stop: float, total_steps: int) -> list[int]:
    """Evenly spaced flip steps in ``[start, stop] * total_steps``, shallow first."""
    if not 0 <= start < stop <= 1:
        raise ConfigurationError(f"mutation window needs 0 <= start < stop <= 1, got {start}, {stop}")
    if n_units == 1:
        return [int(round(start * total_steps))]
    span = (stop - start) * total_steps / (n_units - 1)
    return [int(round(start * total_steps + i * span)) for i in range(n_units)]


def apply_mutation(model: AugModel, flip_steps: list[int] | None, step: int) -> None:
    """Units flip from multiplicative to multiplication-free once ``step`` reaches their flip step."""
    units = model.mutation_units()
    for i, unit in enumerate(units):
        mutated = flip_steps is None or step >= flip_steps[i]
        for layer in unit:
            layer.mutated = mutated


def set_depth_weight(model: AugModel, progress: float) -> None:
    """Linearly fade depth-augmentation blocks out over training."""
    for blk in model.blocks:
        if blk.spec.depth_aug:
            blk.depth_weight = max(0.0, 1.0 - progress)


def evaluate(model: AugModel, x: np.ndarray, y: np.ndarray, batch_size: int = 256,
             augmented: bool = False) -> float:
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    was = model.training
    model.eval()
    correct = 0
    for i in range(0, len(x), batch_size):
        logits = model(Tensor(x[i : i + batch_size]), augmented=augmented).data
        correct += int((logits.argmax(axis=1) == y[i : i + batch_size]).sum())
    model.train(was)
    return correct / len(x)


def _epoch_order(seed: int, epoch: int, n: int) -> tuple[np.ndarray, np.random.Generator]:
    rng = np.random.default_rng([seed, epoch])
    return rng.permutation(n), rng


def init_state(model: AugModel, cfg: TrainConfig, n_train: int) -> TrainState:
    spe = max(1, math.ceil(n_train / cfg.batch_size))
    total = cfg.epochs * spe
    state = TrainState(model, make_optimizer(model, cfg, total), cfg, steps_per_epoch=spe)
    if cfg.mutation is not None:
        state.flip_steps = flip_schedule(len(model.mutation_units()), *cfg.mutation, total)
    return state


def run_epoch(state: TrainState, x: np.ndarray, y: np.ndarray,
              x_val: np.ndarray | None = None, y_val: np.ndarray | None = None) -> EpochRecord:
    """Train one epoch, then reorder (except after the final epoch) and evaluate."""
    cfg, model, opt = state.config, state.model, state.optimizer
    t0 = time.perf_counter()
    model.train()
    order, rng = _epoch_order(cfg.seed, state.epoch, len(x))
    lts, las = [], []
    lr = opt.state.current_lr()
    for b in range(state.steps_per_epoch):
        idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
        xb = x[idx]
        if cfg.flip_augmented:
            flip = rng.random(len(idx)) < 0.5
            xb = np.where(flip[:, None, None, None], xb[..., ::-1], xb)
        step = opt.state.step
        apply_mutation(model, state.flip_steps or None, step)
        set_depth_weight(model, step / max(1, state.total_steps))
        try:
            if cfg.augment:
                lt, la = joint_step(model, (xb, y[idx]), opt, cfg.alpha1, cfg.alpha2)
            else:
                lt, la = joint_step(model, (xb, y[idx]), opt, 1.0, 0.0)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {state.epoch}, step {step}: {exc}", exc.layer_id) from exc
        lts.append(lt)
        las.append(la)
        lr = opt.state.current_lr()
    state.epoch += 1
    apply_mutation(model, state.flip_steps or None, opt.state.step)
    if cfg.augment and cfg.reorder and state.epoch < cfg.epochs:
        reorder_weights(model, opt)
    xe, ye = (x, y) if x_val is None else (x_val, y_val)
    acc = evaluate(model, xe, ye)
    rec = EpochRecord(state.epoch, float(np.mean(lts)), float(np.mean(las)), acc, lr,
                      time.perf_counter() - t0)
    state.history.append(rec)
    return rec


def train(model: AugModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          x_val: np.ndarray | None = None, y_val: np.ndarray | None = None) -> TrainState:
    state = init_state(model, cfg, len(x))
    while state.epoch < cfg.epochs:
        run_epoch(state, x, y, x_val, y_val)
    return state
