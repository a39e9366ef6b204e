"""Wide layers split into a multiplication-free target slice and a multiplicative augmented slice."""
from __future__ import annotations

import numpy as np

from .. import hws
from ..mfops import DEFAULT_RANGE, add_conv, shift_conv_train, shift_linear
from ..tensor import ConfigurationError, DimensionError, Module, Parameter, Tensor, cat
from ..tensor import functional as F

FAMILIES = ("shift", "add", "mult")


def aug_channels(c_t: int, multiple: float) -> int:
    """Augmented channel count for a width multiple: ``round((multiple - 1) * c_t)``."""
    if multiple < 1:
        raise ConfigurationError("augmentation multiple must be >= 1")
    return int(round((multiple - 1.0) * c_t))


class HWSContext:
    """Remap networks shared by every layer of a model, keyed by (family, kernel width)."""

    def __init__(self, bank: dict[str, hws.RemapNet] | None = None, mode: str = "bias"):
        self.bank = dict(bank or {})
        self.mode = mode if bank else "identity"

    def lookup(self, family: str, width: int) -> hws.RemapNet | None:
        return self.bank.get(hws.bank_key(family, width))

    def apply(self, w: Tensor, family: str, training: bool) -> Tensor:
        if self.mode == "identity" or family == "mult":
            return w
        net = self.lookup(family, hws.kernel_width(w.shape))
        if net is None:
            return w
        return hws.remap(w, net, mode=self.mode, training=training)


def mf_conv(x: Tensor, w: Tensor, family: str, stride: int, padding: int, groups: int,
            p_range=DEFAULT_RANGE, add_precision: int = 32) -> Tensor:
    if family == "shift":
        return shift_conv_train(x, w, stride, padding, groups, *p_range)
    if family == "add":
        return add_conv(x, w, stride, padding, groups, add_precision)
    if family == "mult":
        return F.conv2d(x, w, stride, padding, groups)
    raise ConfigurationError(f"unknown operator family {family!r}")


class AugLayer(Module):
    """Common bookkeeping: a wide weight with ``[0, c_t)`` as the target slice.

    ``family`` is the operator the target slice uses once ``mutated`` is set;
    before that (block mutation) the target slice is multiplicative.
    ``aug_family`` is the augmented slice operator (``mult`` for hybrid
    computing, or the target family for same-operator augmentation).
    """

    layer_id: str = ""
    family: str = "shift"
    aug_family: str = "mult"
    mutated: bool = True
    hws_ctx: HWSContext | None = None
    p_range = DEFAULT_RANGE
    add_precision = 32

    @property
    def active_family(self) -> str:
        return self.family if self.mutated else "mult"

    def target_weight(self) -> Tensor:
        raise NotImplementedError

    def mf_weight(self) -> Tensor:
        """Target weight after HWS, as consumed by the multiplication-free operator."""
        w = self.target_weight()
        if self.hws_ctx is None:
            return w
        return self.hws_ctx.apply(w, self.active_family, self.training)

    def _check(self, x: Tensor, expected: int) -> None:
        if x.shape[1] != expected:
            raise DimensionError(f"{self.layer_id}: expected {expected} input channels, got {x.shape[1]}")


class AugConv(AugLayer):
    """``Y_t = MF(X_t) + M(X_a)``, ``Y_a = M(X)``, ``Y = cat(Y_t, Y_a)``."""

    def __init__(self, cin_t, cin_a, cout_t, cout_a, k=1, stride=1, family="shift",
                 rng: np.random.Generator | None = None, layer_id=""):
        rng = rng or np.random.default_rng()
        cin = cin_t + cin_a
        self.weight = Parameter(rng.normal(0, np.sqrt(2.0 / (cin * k * k)), (cout_t + cout_a, cin, k, k)))
        self.cin_t, self.cin_a, self.c_t, self.c_a = cin_t, cin_a, cout_t, cout_a
        self.k, self.stride, self.padding = k, stride, k // 2
        self.family, self.layer_id = family, layer_id

    def target_weight(self) -> Tensor:
        return self.weight[: self.c_t, : self.cin_t]

    def forward(self, x: Tensor, augmented: bool) -> Tensor:
        fam, s, p = self.active_family, self.stride, self.padding
        if not augmented:
            self._check(x, self.cin_t)
            return mf_conv(x, self.mf_weight(), fam, s, p, 1, self.p_range, self.add_precision)
        self._check(x, self.cin_t + self.cin_a)
        x_t = x[:, : self.cin_t] if self.cin_a else x
        y_t = mf_conv(x_t, self.mf_weight(), fam, s, p, 1, self.p_range, self.add_precision)
        if self.cin_a:
            w_ta = self.weight[: self.c_t, self.cin_t :]
            y_t = y_t + mf_conv(x[:, self.cin_t :], w_ta, self.aug_family, s, p, 1, self.p_range)
        if not self.c_a:
            return y_t
        y_a = mf_conv(x, self.weight[self.c_t :], self.aug_family, s, p, 1, self.p_range)
        return cat([y_t, y_a], axis=1)


class AugDWConv(AugLayer):
    """Depthwise: target channels through MFConv, augmented channels through Conv."""

    def __init__(self, c_t, c_a, k=3, stride=1, family="shift",
                 rng: np.random.Generator | None = None, layer_id=""):
        rng = rng or np.random.default_rng()
        self.weight = Parameter(rng.normal(0, np.sqrt(2.0 / (k * k)), (c_t + c_a, 1, k, k)))
        self.c_t, self.c_a = c_t, c_a
        self.cin_t, self.cin_a = c_t, c_a
        self.k, self.stride, self.padding = k, stride, k // 2
        self.family, self.layer_id = family, layer_id

    def target_weight(self) -> Tensor:
        return self.weight[: self.c_t]

    def forward(self, x: Tensor, augmented: bool) -> Tensor:
        fam, s, p = self.active_family, self.stride, self.padding
        if not augmented:
            self._check(x, self.c_t)
            return mf_conv(x, self.mf_weight(), fam, s, p, self.c_t, self.p_range, self.add_precision)
        self._check(x, self.c_t + self.c_a)
        if not self.c_a:
            return mf_conv(x, self.mf_weight(), fam, s, p, self.c_t, self.p_range, self.add_precision)
        out_t = mf_conv(x[:, : self.c_t], self.mf_weight(), fam, s, p, self.c_t, self.p_range,
                        self.add_precision)
        out_a = mf_conv(x[:, self.c_t :], self.weight[self.c_t :], self.aug_family, s, p, self.c_a,
                        self.p_range)
        return cat([out_t, out_a], axis=1)


class AugFC(AugLayer):
    """Classifier head: ``Y = ShiftLinear(X_t) + Linear(X_a)``; bias on the shift term."""

    def __init__(self, din_t, din_a, dout, family="shift", rng: np.random.Generator | None = None,
                 layer_id="head"):
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(din_t + din_a)
        self.weight = Parameter(rng.uniform(-bound, bound, (dout, din_t + din_a)))
        self.bias = Parameter(np.zeros(dout))
        self.cin_t, self.cin_a = din_t, din_a
        self.c_t, self.c_a = dout, 0
        if family == "add":
            family = "mult"  # no adder form for the classifier
        self.family, self.layer_id = family, layer_id

    def target_weight(self) -> Tensor:
        return self.weight[:, : self.cin_t]

    def _target(self, x_t: Tensor) -> Tensor:
        w = self.mf_weight()
        if self.active_family == "shift":
            return shift_linear(x_t, w, self.bias, *self.p_range)
        return F.linear(x_t, w, self.bias)

    def forward(self, x: Tensor, augmented: bool) -> Tensor:
        if not augmented:
            self._check(x, self.cin_t)
            return self._target(x)
        self._check(x, self.cin_t + self.cin_a)
        if not self.cin_a:
            return self._target(x)
        y = self._target(x[:, : self.cin_t])
        w_a = self.weight[:, self.cin_t :]
        if self.aug_family == "shift":
            return y + shift_linear(x[:, self.cin_t :], w_a, None, *self.p_range)
        return y + F.linear(x[:, self.cin_t :], w_a)


class AugBatchNorm(Module):
    """Shared affine parameters, separate running statistics per forward mode."""

    def __init__(self, c_t: int, c_a: int, momentum: float = 0.1, eps: float = 1e-5):
        c = c_t + c_a
        self.gamma = Parameter(np.ones(c))
        self.beta = Parameter(np.zeros(c))
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)
        self.target_mean = np.zeros(c_t, dtype=np.float32)
        self.target_var = np.ones(c_t, dtype=np.float32)
        self.c_t, self.c_a = c_t, c_a
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor, augmented: bool) -> Tensor:
        if augmented:
            return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                                self.training, self.momentum, self.eps)
        g = self.gamma[: self.c_t] if self.c_a else self.gamma
        b = self.beta[: self.c_t] if self.c_a else self.beta
        return F.batch_norm(x, g, b, self.target_mean, self.target_var, self.training,
                            self.momentum, self.eps)
