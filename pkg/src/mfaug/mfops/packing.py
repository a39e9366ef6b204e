"""5-bit code packing for power-of-two weights.

Code layout (one per weight, row-major)::

    bit 4     : sign (1 = negative)
    bits 0..3 : exponent - p_min
    0b10000   : reserved for zero ("negative" sign on the lowest level)

Codes form a little-endian bit stream: code ``i`` occupies bits ``5i..5i+4``.

Layer record (all integers little-endian)::

    u16 len(layer_id) | layer_id utf-8 | u8 ndim | ndim x u32 dims
    i8 p_min | i8 p_max | u32 n_codes | ceil(5 n / 8) packed bytes
"""
from __future__ import annotations

import struct

import numpy as np

from .quant import PowTwoWeight

CODE_BITS = 5
ZERO_CODE = 0b10000


class PackingError(ValueError):
    pass


def encode(qw: PowTwoWeight) -> np.ndarray:
    offset = (qw.exponent.astype(np.int16) - qw.p_min).astype(np.uint8)
    codes = np.where(qw.sign < 0, 0b10000 | offset, offset).astype(np.uint8)
    codes[qw.sign == 0] = ZERO_CODE
    if np.any((qw.sign < 0) & (offset == 0)):
        raise PackingError("negative weight on the lowest level collides with the zero code")
    return codes.reshape(-1)


def decode(codes: np.ndarray, shape, p_min: int, p_max: int) -> PowTwoWeight:
    codes = np.asarray(codes, dtype=np.uint8).reshape(shape)
    zero = codes == ZERO_CODE
    sign = np.where(codes & 0b10000, -1, 1).astype(np.int8)
    sign[zero] = 0
    exponent = ((codes & 0b01111).astype(np.int16) + p_min).astype(np.int8)
    return PowTwoWeight(sign, exponent, p_min, p_max)


def pack_codes(codes: np.ndarray) -> bytes:
    codes = np.asarray(codes, dtype=np.uint8).reshape(-1)
    bits = ((codes[:, None] >> np.arange(CODE_BITS, dtype=np.uint8)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_codes(data: bytes, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: n * CODE_BITS]
    if bits.size != n * CODE_BITS:
        raise PackingError("truncated code stream")
    weights = (1 << np.arange(CODE_BITS)).astype(np.uint8)
    return (bits.reshape(n, CODE_BITS) * weights).sum(axis=1).astype(np.uint8)


def write_layer(layer_id: str, qw: PowTwoWeight) -> bytes:
    name = layer_id.encode()
    codes = encode(qw)
    head = struct.pack("<H", len(name)) + name
    head += struct.pack("<B", len(qw.shape)) + struct.pack(f"<{len(qw.shape)}I", *qw.shape)
    head += struct.pack("<bbI", qw.p_min, qw.p_max, codes.size)
    return head + pack_codes(codes)


def read_layer(buf: bytes, offset: int = 0) -> tuple[str, PowTwoWeight, int]:
    """Parse one record at ``offset``; returns (layer_id, weight, next offset)."""
    try:
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        layer_id = buf[offset : offset + nlen].decode()
        offset += nlen
        (ndim,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, offset)
        offset += 4 * ndim
        p_min, p_max, n = struct.unpack_from("<bbI", buf, offset)
        offset += 6
    except struct.error as exc:
        raise PackingError(f"truncated layer header at byte {offset}") from exc
    if int(np.prod(shape)) != n:
        raise PackingError(f"layer {layer_id}: code count {n} does not match shape {shape}")
    nbytes = (n * CODE_BITS + 7) // 8
    codes = unpack_codes(buf[offset : offset + nbytes], n)
    return layer_id, decode(codes, shape, p_min, p_max), offset + nbytes
