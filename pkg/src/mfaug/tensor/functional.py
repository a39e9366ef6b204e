"""Differentiable neural-network primitives on NCHW tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigurationError, DimensionError, Tensor, ensure_tensor


def _check_conv(x: np.ndarray, w: np.ndarray, groups: int) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv expects 4-D input and weight, got {x.shape} and {w.shape}")
    if groups < 1 or x.shape[1] % groups or w.shape[0] % groups:
        raise ConfigurationError(f"groups={groups} must divide C_in={x.shape[1]} and C_out={w.shape[0]}")
    if w.shape[1] * groups != x.shape[1]:
        raise DimensionError(
            f"weight expects {w.shape[1] * groups} input channels, input has {x.shape[1]}"
        )
    if w.shape[2] != w.shape[3]:
        raise DimensionError("only square kernels are supported")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Return a strided view of shape ``(N, C, H', W', k, k)``."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def col2im(cols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add window gradients ``(N, C, H', W', k, k)`` back onto the input."""
    n, c, h, w = x_shape
    ho, wo = cols.shape[2], cols.shape[3]
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, :, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def _grouped_windows(cols: np.ndarray, groups: int) -> np.ndarray:
    n, c, ho, wo, k, _ = cols.shape
    return cols.reshape(n, groups, c // groups, ho, wo, k, k)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0, groups: int = 1):
    """Plain numpy cross-correlation; returns output and the window view."""
    _check_conv(x, w, groups)
    k = w.shape[2]
    if k == 1 and stride == 1 and padding == 0 and groups == 1:
        n, c, h, wd = x.shape
        out = (w.reshape(w.shape[0], c) @ x.reshape(n, c, h * wd)).reshape(n, -1, h, wd)
        return out, None
    cols = im2col(x, k, stride, padding)
    n, c, ho, wo = cols.shape[:4]
    cout = w.shape[0]
    if groups == 1:
        # (N, Ho, Wo, C*k*k) @ (C*k*k, Cout)
        mat = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        out = (mat @ w.reshape(cout, -1).T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    elif groups == c and cout == c:
        out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, w))
        for i in range(k):
            for j in range(k):
                out += cols[:, :, :, :, i, j] * w[None, :, 0, i, j, None, None]
    else:
        g = _grouped_windows(cols, groups)
        wg = w.reshape(groups, cout // groups, c // groups, k, k)
        out = np.einsum("ngchwij,gocij->ngohw", g, wg, optimize=True).reshape(n, cout, ho, wo)
    return np.ascontiguousarray(out), cols


def _pointwise_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray):
    n, c, h, wd = x.shape
    gm = g.reshape(n, -1, h * wd)
    gw = np.tensordot(gm, x.reshape(n, c, h * wd), axes=([0, 2], [0, 2])).reshape(w.shape)
    gx = (w.reshape(w.shape[0], c).T @ gm).reshape(x.shape)
    return gx, gw


def _depthwise_backward(g, cols, x_shape, w, stride, padding):
    n, c, ho, wo, k, _ = cols.shape
    gw = np.empty_like(w)
    _, _, h, wd = x_shape
    gx = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            gw[:, 0, i, j] = np.einsum("nchw,nchw->c", g, cols[:, :, :, :, i, j])
            gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g * w[None, :, 0, i, j, None, None]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx, gw


def conv2d_backward(g: np.ndarray, cols: np.ndarray, x_shape, w: np.ndarray, stride, padding, groups):
    n, c, ho, wo, k, _ = cols.shape
    cout = w.shape[0]
    if groups == c and cout == c and groups > 1:
        return _depthwise_backward(g, cols, x_shape, w, stride, padding)
    if groups == 1:
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        mat = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        gw = (gm.T @ mat).reshape(w.shape)
        gcols = (gm @ w.reshape(cout, -1)).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    elif groups == c and cout == c:
        gw = np.einsum("nchw,nchwij->cij", g, cols, optimize=True)[:, None]
        gcols = g[..., None, None] * w[:, 0][None, :, None, None]
    else:
        gg = g.reshape(n, groups, cout // groups, ho, wo)
        win = _grouped_windows(cols, groups)
        wg = w.reshape(groups, cout // groups, c // groups, k, k)
        gw = np.einsum("ngohw,ngchwij->gocij", gg, win, optimize=True).reshape(w.shape)
        gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True).reshape(n, c, ho, wo, k, k)
    gx = col2im(gcols, x_shape, k, stride, padding)
    return gx, gw


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation of ``x`` (N×C×H×W) with ``w`` (C_out×C/groups×K×K)."""
    out, cols = conv2d_forward(x.data, w.data, stride, padding, groups)
    x_shape, xd, wd = x.shape, x.data, w.data

    def backward(g):
        if cols is None:
            return _pointwise_backward(g, xd, wd)
        return conv2d_backward(g, cols, x_shape, wd, stride, padding, groups)

    return Tensor.from_op(out, (x, w), backward, "conv2d")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    y = x @ w.T
    return y if b is None else y + b


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def hard_swish(x: Tensor) -> Tensor:
    d = x.data
    r6 = np.clip(d + 3.0, 0.0, 6.0)
    y = d * r6 / 6.0

    def backward(g):
        slope = np.where(d < -3.0, 0.0, np.where(d > 3.0, 1.0, (2.0 * d + 3.0) / 6.0))
        return (g * slope.astype(d.dtype),)

    return Tensor.from_op(y, (x,), backward, "hard_swish")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError("global_avg_pool expects N×C×H×W")
    n, c, h, w = x.shape
    y = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return Tensor.from_op(y, (x,), backward, "gap")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation; updates running statistics in place when training."""
    d = x.data
    axes = (0, 2, 3) if d.ndim == 4 else (0,)
    bshape = (1, -1, 1, 1) if d.ndim == 4 else (1, -1)
    if training:
        mean = d.mean(axis=axes)
        var = d.var(axis=axes)
        m = d.size // d.shape[1]
        unbiased = var * m / max(m - 1, 1)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    xhat = (d - mean.reshape(bshape)) * inv_std.reshape(bshape)
    gd, bd = gamma.data, beta.data
    y = xhat * gd.reshape(bshape) + bd.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gd.reshape(bshape)
        if training:
            m = d.size // d.shape[1]
            gx = (
                inv_std.reshape(bshape)
                / m
                * (m * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            )
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return Tensor.from_op(y.astype(d.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def smoothed_targets(labels: np.ndarray, num_classes: int, smoothing: float = 0.1) -> np.ndarray:
    """One-hot targets with ``(1-ε)+ε/K`` on the true class and ``ε/K`` elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    t = np.full((labels.size, num_classes), smoothing / num_classes)
    t[np.arange(labels.size), labels] += 1.0 - smoothing
    return t


def cross_entropy_label_smoothed(logits: Tensor, labels, smoothing: float = 0.1) -> Tensor:
    z = logits.data
    if z.ndim != 2:
        raise DimensionError("cross entropy expects N×K logits")
    n, k = z.shape
    target = smoothed_targets(labels, k, smoothing).astype(z.dtype)
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    loss = -(target * logp).sum() / n

    def backward(g):
        return (g * (np.exp(logp) - target) / n,)

    return Tensor.from_op(np.asarray(loss, dtype=z.dtype), (logits,), backward, "cross_entropy")


def elementwise(x: Tensor, fn, dfn, op: str = "elementwise") -> Tensor:
    """Lift a numpy function with known derivative into the autodiff graph."""
    d = x.data
    y = fn(d).astype(d.dtype, copy=False)
    return Tensor.from_op(y, (x,), lambda g: (g * dfn(d).astype(d.dtype, copy=False),), op)


def pad_channels(x: Tensor, before: int, after: int) -> Tensor:
    if not before and not after:
        return x
    x = ensure_tensor(x)
    c = x.shape[1]
    data = np.pad(x.data, ((0, 0), (before, after)) + ((0, 0),) * (x.ndim - 2))
    return Tensor.from_op(data, (x,), lambda g: (g[:, before : before + c],), "pad_channels")
