from .add import add_conv
from .packing import PackingError, decode, encode, pack_codes, read_layer, unpack_codes, write_layer
from .quant import (
    DEFAULT_RANGE,
    PowTwoWeight,
    QuantizedActivation,
    dequantize_activation,
    pow2_ste,
    quantize_activation,
    quantize_pow2,
)
from .shift import (
    AccumulatorOverflow,
    eval_error_bound,
    shift_conv_eval,
    shift_conv_train,
    shift_linear,
    shift_linear_eval,
)

__all__ = [
    "AccumulatorOverflow",
    "DEFAULT_RANGE",
    "PackingError",
    "PowTwoWeight",
    "QuantizedActivation",
    "add_conv",
    "decode",
    "dequantize_activation",
    "encode",
    "eval_error_bound",
    "pack_codes",
    "pow2_ste",
    "quantize_activation",
    "quantize_pow2",
    "read_layer",
    "shift_conv_eval",
    "shift_conv_train",
    "shift_linear",
    "shift_linear_eval",
    "unpack_codes",
    "write_layer",
]
