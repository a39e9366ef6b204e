"""
Training a shift network with a multiplicative helper
=====================================================

A tiny shift network is trained as the narrow slice of a wider model whose
extra channels use ordinary multiplication. Only the narrow slice is exported.
Set ``MFAUG_DEMO_N`` to train on more samples.
"""

import os
import time

import numpy as np

from mfaug.augment import TrainConfig, export_target
from mfaug.data import synthetic_dataset
from mfaug.presets import build_remap_bank, desk_arch, run_method

n = int(os.environ.get("MFAUG_DEMO_N", 2000))
ds = synthetic_dataset(2 * n, 10, 32, seed=0, noise=0.8, jitter=0.6)
train_set, test_set = ds.split(n)
train_xy, test_xy = train_set.arrays(), test_set.arrays()
arch = desk_arch()
cfg = TrainConfig(epochs=8, lr=0.1)

# %%
# The weight-sharing remappers come from a plain model and a shift model
# trained from the same initialisation; one small network per kernel width.
t0 = time.perf_counter()
bank = build_remap_bank(arch, *train_xy, cfg)
print(f"remappers for widths {sorted(bank)} in {time.perf_counter() - t0:.0f}s")

# %%
# Direct training against augmented training, same seed and batches.
for name in ("Shift", "AugShift"):
    model, acc = run_method(name, arch, train_xy, test_xy, cfg, bank=bank)
    print(f"{name:10s} test accuracy {acc:.3f}")

# %%
# The export keeps the narrow slice alone. Its logits are the same numbers the
# wide model produces when run without the extra channels.
model.eval()
exp = export_target(model)
x = test_xy[0][:8]
print("identical logits:", np.array_equal(exp.forward(x).data, model(x).data))
print("integer-path predictions:", exp.predict(x, integer=True), "labels:", test_xy[1][:8])
