"""Named training recipes and the remap-bank pretraining pipeline."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import hws
from .augment import ArchSpec, AugModel, HWSContext, TrainConfig, evaluate, train
from .tensor import ConfigurationError


@dataclass(frozen=True)
class Method:
    name: str
    family: str
    aug_family: str = "mult"
    augment: bool = False
    hws: bool = False
    reorder: bool = True


METHODS = {m.name: m for m in (
    Method("Base", "mult"),
    Method("NetAug", "mult", "mult", augment=True),
    Method("Shift", "shift"),
    Method("AugShift", "shift", "mult", augment=True, hws=True),
    Method("AugShift-noHWS", "shift", "mult", augment=True),
    Method("AugShift-noReorder", "shift", "mult", augment=True, hws=True, reorder=False),
    Method("ShiftAug", "shift", "shift", augment=True),  # same-operator augmentation
    Method("Add", "add"),
    Method("AugAdd", "add", "mult", augment=True, hws=True),
)}


def get_method(name: str) -> Method:
    try:
        return METHODS[name]
    except KeyError:
        raise ConfigurationError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None


def method_arch(method: Method, arch: ArchSpec) -> ArchSpec:
    """Apply a method's operator families; non-augmented methods drop the augmented channels."""
    out = replace(arch, family=method.family, aug_family=method.aug_family,
                  blocks=[replace(b, family=None) for b in arch.blocks])
    if not method.augment:
        out = replace(out, width_aug=1.0, expand_aug=1.0)
    return out


def paired_weights(mult_model: AugModel, mf_model: AugModel) -> dict[int, tuple[list, list]]:
    """Target weights of two same-shape models grouped by kernel width."""
    pairs: dict[int, tuple[list, list]] = {}
    for a, b in zip(mult_model.aug_layers(), mf_model.aug_layers()):
        wa, wb = a.target_weight().data, b.target_weight().data
        width = hws.kernel_width(wa.shape)
        pairs.setdefault(width, ([], []))
        pairs[width][0].append(wa)
        pairs[width][1].append(wb)
    return pairs


def build_remap_bank(arch: ArchSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                     family: str = "shift", iters: int = 300, ridge: float = 1e-2,
                     fit_prior: bool = False) -> dict[str, hws.RemapNet]:
    """Directly train a multiplicative and a ``family`` target model, fit one remapper per kernel width.

    Both models start from the same initialisation so their weights pair up
    element by element.
    """
    plain = replace(cfg, augment=False, mutation=None)
    base = AugModel(method_arch(get_method("Base"), arch), seed=cfg.seed)
    train(base, x, y, plain)
    mf_method = Method("ref", family)
    mf = AugModel(method_arch(mf_method, arch), seed=cfg.seed)
    train(mf, x, y, plain)
    bank = {}
    for width, (mults, mfs) in paired_weights(base, mf).items():
        prior = None if fit_prior else hws.default_prior(family, mults if family == "shift" else mfs)
        bank[hws.bank_key(family, width)] = hws.pretrain_remapper(mults, mfs, family, iters, cfg.seed,
                                                                  prior=prior, ridge=ridge)
    return bank


def run_method(method: Method | str, arch: ArchSpec, train_xy, test_xy, cfg: TrainConfig,
               bank: dict[str, hws.RemapNet] | None = None, mode: str = "bias") -> tuple[AugModel, float]:
    """Train one recipe from scratch and return the model with its test accuracy."""
    method = get_method(method) if isinstance(method, str) else method
    ctx = HWSContext(bank if method.hws else None, mode)
    model = AugModel(method_arch(method, arch), seed=cfg.seed, hws_ctx=ctx)
    train(model, *train_xy, replace(cfg, augment=method.augment, reorder=method.reorder))
    return model, evaluate(model, *test_xy)


def desk_arch(width_aug: float = 2.8, expand_aug: float = 1.0) -> ArchSpec:
    """The desk-scale backbone: about 3k target parameters at 32x32."""
    from .augment import BlockSpec

    return ArchSpec(stem=4, blocks=[BlockSpec(8, stride=2), BlockSpec(8), BlockSpec(12, stride=2),
                                    BlockSpec(12)], width_aug=width_aug, expand_aug=expand_aug)


def compare_methods(methods, arch: ArchSpec, train_xy, test_xy, cfg: TrainConfig, seeds,
                    bank: dict[str, hws.RemapNet] | None = None, log=None) -> dict[str, list[float]]:
    """Test accuracy of every method for every seed; the same seed means the same init and batches."""
    out: dict[str, list[float]] = {}
    for name in methods:
        for seed in seeds:
            _, acc = run_method(name, arch, train_xy, test_xy, replace(cfg, seed=seed), bank)
            out.setdefault(name, []).append(acc)
            if log:
                log(f"{name} seed={seed} acc={acc:.4f}")
    return out
