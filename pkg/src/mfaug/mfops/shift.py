"""Shift convolution / linear layers: float STE training path and integer shift path."""
from __future__ import annotations

import numpy as np

from ..tensor import DimensionError, Tensor
from ..tensor import functional as F
from ..tensor.functional import _check_conv, im2col
from .quant import DEFAULT_RANGE, PowTwoWeight, QuantizedActivation, pow2_ste, quantize_activation


class AccumulatorOverflow(OverflowError):
    def __init__(self, layer_id: str | None, bits: int):
        super().__init__(f"integer accumulator exceeded {bits} bits in layer {layer_id}")
        self.layer_id = layer_id


def shift_conv_train(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, groups: int = 1,
                     p_min: int = DEFAULT_RANGE[0], p_max: int = DEFAULT_RANGE[1]) -> Tensor:
    return F.conv2d(x, pow2_ste(w, p_min, p_max), stride, padding, groups)


def shift_linear(x: Tensor, w: Tensor, b: Tensor | None = None,
                 p_min: int = DEFAULT_RANGE[0], p_max: int = DEFAULT_RANGE[1]) -> Tensor:
    # bias stays full precision
    return F.linear(x, pow2_ste(w, p_min, p_max), b)


def _shift(values: np.ndarray, p: int) -> np.ndarray:
    return np.left_shift(values, p) if p >= 0 else np.right_shift(values, -p)


def _check_acc(acc: np.ndarray, bits: int, layer_id: str | None) -> None:
    lim = 2 ** (bits - 1)
    if acc.size and (acc.max() >= lim or acc.min() < -lim):
        raise AccumulatorOverflow(layer_id, bits)


def _shift_accumulate(cols: np.ndarray, qw: PowTwoWeight, acc_bits: int, layer_id) -> np.ndarray:
    """``cols``: (M, G, D) integer taps; weights (G, O, D). Returns (M, G, O)."""
    m, groups, d = cols.shape
    sign = qw.sign.reshape(groups, -1, d).astype(np.int64)
    expo = qw.exponent.reshape(groups, -1, d)
    acc = np.zeros((m, groups, sign.shape[1]), dtype=np.int64)
    for p in np.unique(expo[sign != 0]):
        # sign pattern restricted to taps with this exponent: +1 add, -1 subtract
        pattern = np.where(expo == p, sign, 0)
        shifted = _shift(cols, int(p))
        acc += np.einsum("mgd,god->mgo", shifted, pattern)
        _check_acc(acc, acc_bits, layer_id)
    return acc


def shift_conv_eval(x, qw: PowTwoWeight, stride: int = 1, padding: int = 0, groups: int = 1,
                    act: QuantizedActivation | None = None, acc_bits: int = 32,
                    layer_id: str | None = None) -> Tensor:
    """Convolution using only integer shifts, sign flips and additions.

    ``x`` is quantized to 16-bit integers first unless a quantized activation is
    passed directly. Negative exponents are arithmetic right shifts.
    """
    if act is None:
        act = quantize_activation(x)
    xi = act.values.astype(np.int64)
    wshape = qw.shape
    _check_conv(xi, np.empty(wshape), groups)
    k = wshape[2]
    cols = im2col(xi, k, stride, padding)
    n, c, ho, wo = cols.shape[:4]
    cg = c // groups
    taps = cols.reshape(n, groups, cg, ho, wo, k, k).transpose(0, 3, 4, 1, 2, 5, 6)
    taps = taps.reshape(n * ho * wo, groups, cg * k * k)
    acc = _shift_accumulate(taps, qw, acc_bits, layer_id)
    acc = acc.reshape(n, ho, wo, wshape[0]).transpose(0, 3, 1, 2)
    dtype = np.asarray(getattr(x, "data", x)).dtype
    if dtype.kind != "f":
        dtype = np.float32
    return Tensor((acc.astype(np.float64) * act.scale).astype(dtype))


def shift_linear_eval(x, qw: PowTwoWeight, b=None, act: QuantizedActivation | None = None,
                      acc_bits: int = 32, layer_id: str | None = None) -> Tensor:
    if act is None:
        act = quantize_activation(x)
    xi = act.values.astype(np.int64)
    if xi.ndim != 2 or xi.shape[1] != qw.shape[1]:
        raise DimensionError(f"shift linear: input {xi.shape} incompatible with weight {qw.shape}")
    acc = _shift_accumulate(xi[:, None, :], qw, acc_bits, layer_id)[:, 0, :]
    y = acc.astype(np.float64) * act.scale
    if b is not None:
        y = y + np.asarray(getattr(b, "data", b), dtype=np.float64)
    return Tensor(y.astype(np.float32))


def eval_error_bound(qw: PowTwoWeight, scale: float) -> np.ndarray:
    """Per-output-channel bound on |eval - train|: one activation step per nonzero tap."""
    nz = (qw.sign != 0).reshape(qw.shape[0], -1).sum(axis=1)
    return nz * scale
