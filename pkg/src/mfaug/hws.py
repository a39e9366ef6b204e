"""Heterogeneous weight sharing.

Shared weights are stored in the multiplicative (roughly Gaussian) form. Before
a multiplication-free operator uses them they pass through a frozen residual
map ``FC`` followed by a monotone distribution map ``r``: the Gaussian CDF of
the value under the fitted statistics, pushed through the Laplace quantile
function. The default application is residual: ``w + r(FC(w))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .tensor import Tensor
from .tensor import functional as F

CPF_CLAMP = 1e-12
HIDDEN_FACTOR = 8
MODES = ("bias", "sum", "direct", "identity")


class DegenerateDistribution(ValueError):
    pass


class RemapContractError(RuntimeError):
    pass


class PairingError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateDistribution("Gaussian std must be positive")


@dataclass(frozen=True)
class LaplacePrior:
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Laplace scale must be positive")


def fit_gaussian(w) -> GaussianStats:
    """Sample mean and population standard deviation of all elements."""
    w = np.asarray(getattr(w, "data", w), dtype=np.float64).reshape(-1)
    if w.size < 2 or np.all(w == w[0]):
        raise DegenerateDistribution("need at least two distinct values to fit a Gaussian")
    return GaussianStats(float(w.mean()), float(w.std()))


def _lower_tail(x, g: GaussianStats):
    """``z`` and ``t = min(cdf, 1 - cdf)``, computed without cancellation."""
    z = (np.asarray(x, dtype=np.float64) - g.mean) / g.std
    return z, 0.5 * erfc(np.abs(z) / np.sqrt(2.0))


def cpf_gaussian(x, g: GaussianStats):
    z, t = _lower_tail(x, g)
    p = np.where(z < 0, t, 1.0 - t)
    return float(p) if np.ndim(p) == 0 else p


def ppf_laplace(p, l: LaplacePrior):
    """Inverse Laplace CDF: ``u - b * sign(p - 1/2) * ln(1 - 2 |p - 1/2|)``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("ppf_laplace is defined on the open interval (0, 1)")
    p = np.clip(p, CPF_CLAMP, 1 - CPF_CLAMP)
    q = l.loc - l.scale * np.sign(p - 0.5) * np.log(1 - 2 * np.abs(p - 0.5))
    return float(q) if np.ndim(q) == 0 else q


def distribution_map(x, g: GaussianStats, l: LaplacePrior) -> np.ndarray:
    """Elementwise ``ppf_laplace(cpf_gaussian(x))``; strictly increasing."""
    z, t = _lower_tail(x, g)
    t = np.maximum(t, CPF_CLAMP)
    return l.loc - l.scale * np.sign(z) * np.log(2 * t)


def distribution_map_grad(x, g: GaussianStats, l: LaplacePrior) -> np.ndarray:
    z, t = _lower_tail(x, g)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return np.where(t > CPF_CLAMP, l.scale * pdf / (g.std * np.maximum(t, CPF_CLAMP)), 0.0)


def distribution_remap(x: Tensor, g: GaussianStats, l: LaplacePrior) -> Tensor:
    return F.elementwise(x, lambda d: distribution_map(d, g, l),
                         lambda d: distribution_map_grad(d, g, l), "hws_r")


@dataclass
class RemapNet:
    """Frozen residual map ``in -> 8*in -> in`` plus the distribution parameters."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gauss: GaussianStats
    laplace: LaplacePrior
    family: str = "shift"
    frozen: bool = False
    fit_history: list[float] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.w1.shape[1]

    def freeze(self) -> "RemapNet":
        for a in (self.w1, self.b1, self.w2, self.b2):
            a.setflags(write=False)
        self.frozen = True
        return self

    @classmethod
    def identity(cls, width: int, gauss: GaussianStats | None = None,
                 laplace: LaplacePrior | None = None, family: str = "shift") -> "RemapNet":
        h = HIDDEN_FACTOR * width
        eye = np.eye(width)
        w1 = np.zeros((h, width))
        w1[:width], w1[width : 2 * width] = eye, -eye
        w2 = np.zeros((width, h))
        w2[:, :width], w2[:, width : 2 * width] = eye, -eye
        return cls(w1, np.zeros(h), w2, np.zeros(width), gauss or GaussianStats(0.0, 1.0),
                   laplace or LaplacePrior(), family)

    @classmethod
    def zero(cls, width: int, family: str = "shift") -> "RemapNet":
        net = cls.identity(width, family=family)
        net.w2 = np.zeros_like(net.w2)
        return net

    def fc_numpy(self, rows: np.ndarray) -> np.ndarray:
        h = np.maximum(rows @ self.w1.T + self.b1, 0.0)
        return h @ self.w2.T + self.b2

    def fc(self, rows: Tensor) -> Tensor:
        dt = rows.dtype
        h = F.relu(rows @ Tensor(self.w1.T.astype(dt)) + Tensor(self.b1.astype(dt)))
        return h @ Tensor(self.w2.T.astype(dt)) + Tensor(self.b2.astype(dt))

    def to_record(self) -> dict[str, np.ndarray]:
        return {
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "stats": np.array([self.laplace.loc, self.laplace.scale, self.gauss.mean, self.gauss.std]),
            "family": np.array(self.family),
        }

    @classmethod
    def from_record(cls, rec: dict[str, np.ndarray]) -> "RemapNet":
        u, b, ug, sg = (float(v) for v in rec["stats"])
        net = cls(np.array(rec["w1"]), np.array(rec["b1"]), np.array(rec["w2"]), np.array(rec["b2"]),
                  GaussianStats(ug, sg), LaplacePrior(u, b), str(rec["family"]))
        return net.freeze()


def kernel_width(shape) -> int:
    """FC input width for a weight shape: the spatial kernel size, 1 for dense weights."""
    return int(np.prod(shape[2:])) if len(shape) > 2 else 1


def kernel_rows(w):
    """One row per (output, input) kernel slice.

    Each slice is remapped on its own, so permuting a layer's input or output
    channels permutes the remapped weights the same way.
    """
    return w.reshape(-1, kernel_width(w.shape))


def remap(w: Tensor, net: RemapNet | None, g: GaussianStats | None = None,
          l: LaplacePrior | None = None, mode: str = "bias", training: bool = False) -> Tensor:
    """Weights as seen by a multiplication-free operator.

    ``bias``: ``w + r(FC(w))``; ``sum``: ``r(w + FC(w))``; ``direct``:
    ``r(FC(w))``; ``identity``: ``w``. ``g``/``l`` default to the statistics
    stored on ``net``. The stored weight itself is never modified.
    """
    if mode not in MODES:
        raise ValueError(f"unknown remap mode {mode!r}")
    if mode == "identity" or net is None:
        return w
    if training and not net.frozen:
        raise RemapContractError("remap network must be frozen during augmented training")
    g = g or net.gauss
    l = l or net.laplace
    rows = kernel_rows(w)
    if rows.shape[1] != net.width:
        raise PairingError(f"remap net width {net.width} does not match kernel size {rows.shape[1]}")
    fc = net.fc(rows)
    if mode == "bias":
        out = rows + distribution_remap(fc, g, l)
    elif mode == "sum":
        out = distribution_remap(rows + fc, g, l)
    else:
        out = distribution_remap(fc, g, l)
    return out.reshape(w.shape)


def fit_laplace(x, floor: float = 1e-8) -> LaplacePrior:
    """Maximum-likelihood Laplace fit: median location, mean absolute deviation scale."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    u = float(np.median(x))
    return LaplacePrior(u, max(float(np.abs(x - u).mean()), floor))


def pretrain_remapper(mult_weights, mf_weights, family: str = "shift", iters: int = 300,
                      seed: int = 0, prior: LaplacePrior | None = None, ridge: float = 0.0) -> RemapNet:
    """Fit the residual map on paired per-layer weights of one kernel width.

    The hidden layer is a fixed random ReLU expansion; the output map is fitted
    by gradient descent on the (convex, optionally ridge-penalised)
    least-squares residual ``mf - mult`` with step ``1/L``, so the recorded
    loss never increases. ``prior`` defaults to the MLE fit of the residuals.
    """
    xs, ys = [], []
    for a, b in zip(mult_weights, mf_weights, strict=True):
        a = np.asarray(getattr(a, "data", a), dtype=np.float64)
        b = np.asarray(getattr(b, "data", b), dtype=np.float64)
        if a.shape != b.shape:
            raise PairingError(f"paired layers differ in shape: {a.shape} vs {b.shape}")
        xs.append(kernel_rows(a))
        ys.append(kernel_rows(b - a))
    widths = {x.shape[1] for x in xs}
    if len(widths) != 1:
        raise PairingError(f"layers mix kernel widths {sorted(widths)}; fit one shape class at a time")
    x, y = np.concatenate(xs), np.concatenate(ys)
    n, d = x.shape
    rng = np.random.default_rng(seed)
    net = RemapNet.identity(d, family=family)
    net.w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(HIDDEN_FACTOR * d, d))
    net.b1 = rng.normal(0.0, 0.1 / np.sqrt(d), size=HIDDEN_FACTOR * d)
    h = np.maximum(x @ net.w1.T + net.b1, 0.0)
    ha = np.hstack([h, np.ones((n, 1))])
    lipschitz = 2.0 * (np.linalg.eigvalsh(ha.T @ ha / n)[-1] + ridge)

    def loss(theta):
        return float(((ha @ theta - y) ** 2).sum() / n + ridge * (theta**2).sum())

    theta = np.zeros((ha.shape[1], d))
    for _ in range(iters):
        net.fit_history.append(loss(theta))
        theta -= (2.0 * (ha.T @ (ha @ theta - y)) / n + 2.0 * ridge * theta) / lipschitz
    net.fit_history.append(loss(theta))
    net.w2, net.b2 = theta[:-1].T.copy(), theta[-1].copy()

    out = net.fc_numpy(x)
    sd = float(out.std())
    net.gauss = GaussianStats(float(out.mean()), sd if sd > 1e-8 else 1e-8)
    net.laplace = prior or fit_laplace(y)
    return net.freeze()


def default_prior(family: str, reference_weights) -> LaplacePrior:
    """Laplace prior from reference weights when no fit is wanted.

    shift: zero-centred with the scale of the power-of-two rounding offset, a
    small-variance Laplace on top of the Gaussian weights. add: zero-centred
    with the mean absolute deviation of a reference adder model's weights.
    """
    w = np.concatenate([np.asarray(getattr(r, "data", r), dtype=np.float64).reshape(-1)
                        for r in reference_weights])
    if family == "shift":
        from .mfops import quantize_pow2

        scale = float(np.abs(quantize_pow2(w).dequantize(np.float64) - w).mean())
    else:
        scale = float(np.abs(w - np.median(w)).mean())
    return LaplacePrior(0.0, max(scale, 1e-8))


def bank_key(family: str, width: int) -> str:
    return f"{family}:{width}"
