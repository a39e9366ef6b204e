from . import functional
from .gradcheck import check_gradients, finite_difference_gradient, relative_error
from .nn import BatchNorm, Conv2d, Linear, Module, Parameter
from .optim import SGD, OptimizerState, cosine_lr, train_step
from .tensor import (
    ConfigurationError,
    DimensionError,
    GradTape,
    NonFiniteError,
    Tensor,
    cat,
    ensure_tensor,
)

__all__ = [
    "BatchNorm",
    "ConfigurationError",
    "Conv2d",
    "DimensionError",
    "GradTape",
    "Linear",
    "Module",
    "NonFiniteError",
    "OptimizerState",
    "Parameter",
    "SGD",
    "Tensor",
    "cat",
    "check_gradients",
    "cosine_lr",
    "ensure_tensor",
    "finite_difference_gradient",
    "functional",
    "relative_error",
    "train_step",
]
