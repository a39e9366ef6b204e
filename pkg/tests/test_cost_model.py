from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfaug.cost import (
    EnergyTable,
    UnsupportedShapeError,
    cost_report,
    count_ops,
    energy,
    latency_proxy,
    mobilenet_v2,
)
from mfaug.tensor import ConfigurationError


def graph(*nodes, res=4, cin=8):
    return {"resolution": res, "in_channels": cin, "nodes": list(nodes)}


def conv(name="c", family="mult", cin=8, cout=8, k=1, stride=1, groups=1):
    return {"kind": "conv", "name": name, "family": family, "cin": cin, "cout": cout, "k": k,
            "stride": stride, "padding": k // 2, "groups": groups}


def test_pointwise_conv_counts():
    c = count_ops(graph(conv()))
    assert c.total("mult") == 8 * 8 * 16
    # (fan_in - 1) accumulate-adds per output element
    assert c.total("add") == 7 * 8 * 16
    assert count_ops(graph(conv()), add_convention="mac").total("add") == 1024


def test_shift_and_adder_accounting():
    s = count_ops(graph(conv(family="shift")))
    assert s.total("mult") == 0 and s.total("shift") == 1024 and s.total("add") == 7 * 128
    a = count_ops(graph(conv(family="add")))
    assert a.total("mult") == 0 and a.total("add") == 2 * 1024


def test_mobilenet_v2_multiplications():
    m = count_ops(mobilenet_v2(0.35, 160)).mults_m
    assert abs(m - 29.72) / 29.72 < 0.10
    assert abs(count_ops(mobilenet_v2(1.0, 224)).mults_m - 300.8) < 1.0


def test_energy_table_arithmetic():
    assert energy(Counter({("shift", "INT8"): 10**9})) == pytest.approx(0.024, abs=1e-15)
    assert energy(Counter()) == 0
    mixed = Counter({("mult", "FP32"): 10**6, ("add", "FP32"): 10**6})
    assert energy(mixed) == pytest.approx(4.8e-3, rel=1e-12)  # 4.8 uJ


def test_energy_table_errors():
    with pytest.raises(ConfigurationError):
        energy(Counter({("shift", "FP32"): 1}))
    with pytest.raises(ConfigurationError):
        EnergyTable({("shift", "FP16"): 0.1})
    with pytest.raises(ConfigurationError):
        EnergyTable({("mult", "FP32"): 0.0})


def test_latency_proxy():
    c = Counter({("mult", "FP32"): 2_000_000, ("add", "FP32"): 1_000_000})
    assert latency_proxy(c, {"mult": 1e6, "add": 2e6}) == pytest.approx(2.5)
    doubled = Counter({k: 2 * v for k, v in c.items()})
    assert latency_proxy(doubled) == pytest.approx(2 * latency_proxy(c))
    shift = Counter({("shift", "INT32"): 10**6})
    mult = Counter({("mult", "FP32"): 10**6})
    assert latency_proxy(shift) < latency_proxy(mult)
    with pytest.raises(ConfigurationError):
        latency_proxy(c, {"mult": 0})


def test_dynamic_shape_rejected():
    with pytest.raises(UnsupportedShapeError):
        count_ops({"resolution": None, "in_channels": 3, "nodes": []})
    with pytest.raises(UnsupportedShapeError):
        count_ops(graph(conv(cin=None)))


def test_sequential_total_is_sum_of_layers():
    a, b = conv("a", cout=16, k=3), conv("b", "shift", cin=16, cout=8)
    whole = count_ops(graph(a, b)).totals()
    first = count_ops(graph(a)).totals()
    second = count_ops(graph(b, cin=16)).totals()
    assert whole == first + second


@given(st.lists(st.integers(0, 10**9), min_size=3, max_size=3), st.floats(0.5, 4))
def test_energy_is_linear(counts, factor):
    c = Counter({("mult", "FP32"): counts[0], ("add", "INT8"): counts[1], ("shift", "INT32"): counts[2]})
    scaled = Counter({k: v * factor for k, v in c.items()})
    assert energy(scaled) == pytest.approx(factor * energy(c), rel=1e-9, abs=1e-12)


def test_shift_graph_cheaper_than_mult():
    mult = cost_report(mobilenet_v2(0.35, 160))
    shift = cost_report(mobilenet_v2(0.35, 160, family="shift"))
    assert shift.energy_mj < mult.energy_mj
    assert count_ops(mobilenet_v2(0.35, 160, family="shift")).total("mult") == 0
    assert np.isclose(mult.params_m, shift.params_m)
