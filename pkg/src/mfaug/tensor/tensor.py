"""Dense tensor with define-by-run reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` holding references
to its parents and a closure that maps the output gradient to parent gradients.
Calling :meth:`Tensor.backward` linearises the recorded graph into a
:class:`GradTape` and replays it in reverse topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Operator or optimizer parameters are inconsistent."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a forward or backward pass."""

    def __init__(self, message: str, layer_id: str | None = None):
        super().__init__(message if layer_id is None else f"{message} (layer {layer_id})")
        self.layer_id = layer_id


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out.op = op
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff --------------------------------------------------------
    def backward(self, grad=None) -> "GradTape":
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        tape = GradTape.record(self)
        tape.replay(self, np.asarray(grad, dtype=self.data.dtype))
        return tape

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        a, b = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (unbroadcast(g, a), unbroadcast(g, b)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-ensure_tensor(other, self.dtype))

    def __rsub__(self, other) -> "Tensor":
        return ensure_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        x, y = self.data, other.data
        return Tensor.from_op(
            x * y,
            (self, other),
            lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        x, y = self.data, other.data
        return Tensor.from_op(
            x / y,
            (self, other),
            lambda g: (unbroadcast(g / y, x.shape), unbroadcast(-g * x / (y * y), y.shape)),
            "div",
        )

    def __matmul__(self, other) -> "Tensor":
        other = ensure_tensor(other, self.dtype)
        x, y = self.data, other.data
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise DimensionError(f"matmul shapes {x.shape} and {y.shape} do not align")
        return Tensor.from_op(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    def __getitem__(self, index) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g) if _needs_add_at(index) else full.__setitem__(index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward, "index")

    # -- shape -----------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- reductions ------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise -----------------------------------------------------
    def abs(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * y,), "exp")

    def log(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def __pow__(self, p: float) -> "Tensor":
        x = self.data
        return Tensor.from_op(x ** p, (self,), lambda g: (g * p * x ** (p - 1),), "pow")


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def ensure_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def cat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "cat")


@dataclass
class GradTape:
    """Topologically ordered record of the nodes reachable from a root."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def replay(self, root: Tensor, grad: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient flowing into '{node.op}'")
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def no_grad_params(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
