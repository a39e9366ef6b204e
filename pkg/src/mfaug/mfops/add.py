"""Adder convolution: negative L1 distance between input patches and filters."""
from __future__ import annotations

import numpy as np

from ..tensor import ConfigurationError, Tensor
from ..tensor.functional import _check_conv, col2im, im2col

# bytes of scratch allowed for the (patch, filter) difference tensor per chunk
_CHUNK_BYTES = 64 * 2**20


def _taps(x: np.ndarray, k: int, stride: int, padding: int, groups: int):
    cols = im2col(x, k, stride, padding)
    n, c, ho, wo = cols.shape[:4]
    cg = c // groups
    t = cols.reshape(n, groups, cg, ho, wo, k, k).transpose(0, 1, 3, 4, 2, 5, 6)
    return t.reshape(n, groups, ho * wo, cg * k * k), (n, c, ho, wo)


def add_conv(x: Tensor, f: Tensor, stride: int = 1, padding: int = 0, groups: int = 1,
             precision: int = 32) -> Tensor:
    """``Y = -sum |X - F|`` over each receptive field.

    Backward follows AdderNet: ``dY/dF = sign(X - F)`` and
    ``dY/dX = clip(F - X, -1, 1)``. ``precision=16`` rounds operands and
    result through float16.
    """
    if precision not in (16, 32):
        raise ConfigurationError("add_conv precision must be 16 or 32")
    xd, fd = x.data, f.data
    _check_conv(xd, fd, groups)
    if precision == 16:
        xd = xd.astype(np.float16).astype(np.float32)
        fd = fd.astype(np.float16).astype(np.float32)
    k = fd.shape[2]
    cout = fd.shape[0]
    taps, (n, c, ho, wo) = _taps(xd, k, stride, padding, groups)
    fg = fd.reshape(groups, cout // groups, -1)
    l, d = taps.shape[2], taps.shape[3]
    step = max(1, _CHUNK_BYTES // max(1, groups * l * fg.shape[1] * d * taps.itemsize))

    out = np.empty((n, groups, fg.shape[1], l), dtype=xd.dtype)
    for s in range(0, n, step):
        diff = taps[s : s + step, :, None, :, :] - fg[None, :, :, None, :]
        out[s : s + step] = -np.abs(diff).sum(axis=-1)
    out = out.reshape(n, cout, ho, wo)
    if precision == 16:
        out = out.astype(np.float16).astype(np.float32)
    x_shape, fshape = x.shape, fd.shape

    def backward(g):
        gg = g.reshape(n, groups, cout // groups, l)
        gf = np.zeros_like(fg)
        gt = np.zeros_like(taps)
        for s in range(0, n, step):
            diff = taps[s : s + step, :, None, :, :] - fg[None, :, :, None, :]
            gs = gg[s : s + step, :, :, :, None]
            gf += (gs * np.sign(diff)).sum(axis=(0, 3))
            gt[s : s + step] = (gs * np.clip(-diff, -1.0, 1.0)).sum(axis=2)
        cg = c // groups
        gcols = gt.reshape(n, groups, ho, wo, cg, k, k).transpose(0, 1, 4, 2, 3, 5, 6)
        gx = col2im(gcols.reshape(n, c, ho, wo, k, k), x_shape, k, stride, padding)
        return gx, gf.reshape(fshape)

    return Tensor.from_op(np.ascontiguousarray(out), (x, f), backward, "add_conv")
