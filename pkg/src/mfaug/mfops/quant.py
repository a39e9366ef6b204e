"""Power-of-two weight quantization and 16-bit symmetric activation quantization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import ConfigurationError, Tensor

EXPONENT_BITS = 4
ACT_QMAX = 32767
ACT_QMIN = -32768
DEFAULT_RANGE = (-15, 0)


@dataclass
class PowTwoWeight:
    """Signed power-of-two weights: value = sign * 2**exponent.

    ``sign`` is in {-1, 0, +1}; zero elements carry ``exponent == p_min`` so the
    pair always packs into one 5-bit code (see :mod:`mfaug.mfops.packing`).
    """

    sign: np.ndarray
    exponent: np.ndarray
    p_min: int = DEFAULT_RANGE[0]
    p_max: int = DEFAULT_RANGE[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sign.shape

    def dequantize(self, dtype=np.float32) -> np.ndarray:
        return (self.sign * np.exp2(self.exponent.astype(np.float64))).astype(dtype)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PowTwoWeight)
            and (self.p_min, self.p_max) == (other.p_min, other.p_max)
            and np.array_equal(self.sign, other.sign)
            and np.array_equal(self.exponent, other.exponent)
        )


def _check_range(p_min: int, p_max: int) -> None:
    if p_max - p_min != 2**EXPONENT_BITS - 1:
        raise ConfigurationError(
            f"exponent range [{p_min}, {p_max}] must span exactly {2**EXPONENT_BITS} levels"
        )


def _raw_exponent(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.round(np.log2(np.abs(w.astype(np.float64))))


def quantize_pow2(w, p_min: int = DEFAULT_RANGE[0], p_max: int = DEFAULT_RANGE[1]) -> PowTwoWeight:
    """Round each weight to the nearest signed power of two inside ``[p_min, p_max]``.

    Magnitudes below ``2**(p_min - 1)`` become zero. The code space has no room
    for ``-2**p_min`` next to zero, so negative weights landing on ``p_min`` are
    flushed to zero as well.
    """
    _check_range(p_min, p_max)
    w = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    sign = np.sign(w).astype(np.int8)
    sign[np.abs(w) < 2.0 ** (p_min - 1)] = 0
    p = np.clip(_raw_exponent(np.where(sign == 0, 1.0, w)), p_min, p_max).astype(np.int8)
    sign[(sign < 0) & (p == p_min)] = 0
    p[sign == 0] = p_min
    return PowTwoWeight(sign, p, p_min, p_max)


def ste_mask(w: np.ndarray, p_min: int, p_max: int) -> np.ndarray:
    """1 where the rounded exponent fell inside the range, 0 where it was clamped."""
    raw = _raw_exponent(w)
    return ((raw >= p_min) & (raw <= p_max)).astype(w.dtype)


def pow2_ste(w: Tensor, p_min: int = DEFAULT_RANGE[0], p_max: int = DEFAULT_RANGE[1]) -> Tensor:
    """Dequantized power-of-two weight with a straight-through backward pass."""
    q = quantize_pow2(w.data, p_min, p_max).dequantize(w.dtype)
    mask = ste_mask(w.data, p_min, p_max)
    return Tensor.from_op(q, (w,), lambda g: (g * mask,), "pow2_ste")


@dataclass
class QuantizedActivation:
    values: np.ndarray
    scale: float

    def dequantize(self, dtype=np.float32) -> np.ndarray:
        return (self.values.astype(np.float64) * self.scale).astype(dtype)


def quantize_activation(x, scale: float | None = None) -> QuantizedActivation:
    """Symmetric 16-bit quantization with ``scale = max|x| / 32767`` (round half to even)."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if scale is None:
        peak = float(np.max(np.abs(x))) if x.size else 0.0
        scale = peak / ACT_QMAX if peak > 0 else 1.0
    if scale <= 0:
        raise ConfigurationError("activation scale must be positive")
    q = np.clip(np.rint(x / scale), ACT_QMIN, ACT_QMAX).astype(np.int16)
    return QuantizedActivation(q, float(scale))


def dequantize_activation(qa: QuantizedActivation, dtype=np.float32) -> np.ndarray:
    return qa.dequantize(dtype)
