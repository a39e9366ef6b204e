"""
Multiplication-free operators
=============================

Power-of-two weights, the integer shift path, and the adder convolution.
"""

import numpy as np

from mfaug.mfops import (
    add_conv,
    encode,
    eval_error_bound,
    quantize_activation,
    quantize_pow2,
    shift_conv_eval,
    shift_conv_train,
)
from mfaug.tensor import Tensor

rng = np.random.default_rng(0)

# %%
# Rounding to signed powers of two. Each weight becomes a sign and an
# exponent in [-15, 0], stored as a 5-bit code.
w = rng.normal(scale=0.3, size=(4, 2, 3, 3))
qw = quantize_pow2(w)
print("first kernel row:", w[0, 0, 0].round(3), "->", qw.dequantize(np.float64)[0, 0, 0])
print("codes:", encode(qw)[:9])

# %%
# Training uses float convolution on the rounded weights. Deployment shifts
# 16-bit integer activations instead; the gap stays under one activation step
# per nonzero tap.
x = rng.normal(size=(1, 2, 8, 8))
train_out = shift_conv_train(Tensor(x), Tensor(w), padding=1).data
eval_out = shift_conv_eval(x, qw, padding=1).data
bound = eval_error_bound(qw, quantize_activation(x).scale)
print("max gap per channel:", np.abs(eval_out - train_out).max(axis=(0, 2, 3)))
print("bound per channel:  ", bound)

# %%
# The adder convolution scores a patch by negative l1 distance to the filter,
# so a perfect match gives 0 and everything else is negative.
patch = rng.normal(size=(1, 2, 3, 3))
print(add_conv(Tensor(patch), Tensor(patch)).data.item(), add_conv(Tensor(patch), Tensor(-patch)).data.item())
