import numpy as np
import pytest

from mfaug.augment import AugModel, TrainConfig
from mfaug.data import synthetic_dataset
from mfaug.hws import RemapNet
from mfaug.presets import METHODS, build_remap_bank, desk_arch, get_method, method_arch, run_method
from mfaug.tensor import ConfigurationError


def test_method_table():
    assert get_method("AugShift").hws and not get_method("AugShift-noReorder").reorder
    assert get_method("ShiftAug").aug_family == "shift"
    with pytest.raises(ConfigurationError):
        get_method("Bogus")


def test_plain_methods_drop_augmentation():
    arch = desk_arch()
    for name, m in METHODS.items():
        a = method_arch(m, arch)
        assert (a.width_aug == 1.0) == (not m.augment), name
        model = AugModel(a)
        assert model.target_parameter_count() == AugModel(method_arch(METHODS["Base"], arch)).target_parameter_count()


def test_bank_and_run_method():
    arch = desk_arch()
    arch.resolution = 16
    arch.num_classes = 2
    ds = synthetic_dataset(64, 2, 16, seed=0)
    tr, te = ds.split(48)
    cfg = TrainConfig(epochs=1, batch_size=16)
    bank = build_remap_bank(arch, *tr.arrays(), cfg, iters=20)
    assert bank and all(isinstance(n, RemapNet) and n.frozen for n in bank.values())
    assert all(k.startswith("shift:") for k in bank)
    model, acc = run_method("AugShift", arch, tr.arrays(), te.arrays(), cfg, bank=bank)
    assert 0 <= acc <= 1 and np.isfinite(acc)
