"""Operation counts, compute energy and a latency proxy for exported graphs.

Counting conventions (per output element of a layer with fan-in ``F``):

* multiplicative conv / FC: ``F`` multiplications; adds follow ``add_convention``:
  ``"tree"`` books ``F - 1`` accumulate-adds, ``"mac"`` books ``F``.
* shift layer: ``F`` shifts in place of the multiplications, same adds.
* adder layer: ``2 F`` additions (subtract + accumulate), no multiplications.
* residual connections: one add per element. BN is assumed folded.

Energy is compute-only (no data movement).
"""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

from .tensor import ConfigurationError

# pJ per operation, 45nm CMOS
ENERGY_PJ = {
    ("mult", "FP32"): 3.7, ("mult", "FP16"): 0.9, ("mult", "INT32"): 3.1, ("mult", "INT8"): 0.2,
    ("add", "FP32"): 1.1, ("add", "FP16"): 0.4, ("add", "INT32"): 0.1, ("add", "INT8"): 0.03,
    ("shift", "INT32"): 0.13, ("shift", "INT8"): 0.024,
}

# family -> dtype of its multiply/shift and of its additions
DEFAULT_DTYPES = {"mult": ("FP32", "FP32"), "shift": ("INT32", "INT32"), "add": ("FP32", "FP32")}

# operations per millisecond, a proxy for a small accelerator
DEFAULT_THROUGHPUT = {"mult": 1.0e6, "add": 2.0e6, "shift": 4.0e6}


class UnsupportedShapeError(ValueError):
    pass


@dataclass
class EnergyTable:
    entries: dict[tuple[str, str], float] = field(default_factory=lambda: dict(ENERGY_PJ))

    def __post_init__(self):
        for (kind, dtype), v in self.entries.items():
            if not v > 0:
                raise ConfigurationError(f"energy for {kind}/{dtype} must be positive")
            if kind == "shift" and not dtype.startswith("INT"):
                raise ConfigurationError("shift energies exist only for integer dtypes")

    def __getitem__(self, key: tuple[str, str]) -> float:
        try:
            return self.entries[key]
        except KeyError:
            raise ConfigurationError(f"no energy entry for {key[0]} in {key[1]}") from None


@dataclass
class LayerCount:
    name: str
    ops: Counter  # (kind, dtype) -> count

    def total(self, kind: str) -> int:
        return sum(v for (k, _), v in self.ops.items() if k == kind)


@dataclass
class OpCount:
    layers: list[LayerCount] = field(default_factory=list)
    params: int = 0

    def totals(self) -> Counter:
        out: Counter = Counter()
        for layer in self.layers:
            out.update(layer.ops)
        return out

    def total(self, kind: str) -> int:
        return sum(layer.total(kind) for layer in self.layers)

    @property
    def mults_m(self) -> float:
        return self.total("mult") / 1e6

    @property
    def shifts_m(self) -> float:
        return self.total("shift") / 1e6

    @property
    def adds_m(self) -> float:
        return self.total("add") / 1e6

    def scaled(self, factor: float) -> "OpCount":
        return OpCount([LayerCount(l.name, Counter({k: v * factor for k, v in l.ops.items()}))
                        for l in self.layers], self.params)


@dataclass
class CostReport:
    energy_mj: float
    latency_ms: float  # proxy, not a simulator measurement
    params_m: float
    mults_m: float = 0.0
    shifts_m: float = 0.0
    adds_m: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mult_M", "shift_M", "add_M", "params_M", "energy_mJ", "latency_proxy_ms"])
        w.writerow([f"{self.mults_m:.4f}", f"{self.shifts_m:.4f}", f"{self.adds_m:.4f}",
                    f"{self.params_m:.4f}", f"{self.energy_mj:.6f}", f"{self.latency_ms:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        return (f"mult {self.mults_m:.3f}M  shift {self.shifts_m:.3f}M  add {self.adds_m:.3f}M  "
                f"params {self.params_m:.4f}M\nenergy {self.energy_mj:.6f} mJ (compute only)  "
                f"latency {self.latency_ms:.4f} ms (proxy)")


def _int(node: dict, key: str) -> int:
    v = node.get(key)
    if not isinstance(v, int) or v <= 0:
        raise UnsupportedShapeError(f"node {node.get('name', node['kind'])}: {key}={v!r} is not a static size")
    return v


def _layer_ops(family: str, fan_in: int, outputs: int, dtypes, add_convention: str) -> Counter:
    mdt, adt = dtypes[family]
    acc = fan_in - 1 if add_convention == "tree" else fan_in
    if family == "mult":
        return Counter({("mult", mdt): fan_in * outputs, ("add", adt): acc * outputs})
    if family == "shift":
        return Counter({("shift", mdt): fan_in * outputs, ("add", adt): acc * outputs})
    if family == "add":
        return Counter({("add", adt): 2 * fan_in * outputs})
    raise ConfigurationError(f"unknown operator family {family!r}")


def count_ops(descriptor: dict, resolution: int | None = None, dtypes=None,
              add_convention: str = "tree") -> OpCount:
    """Walk a graph descriptor with static shapes and book every layer's operations."""
    if add_convention not in ("tree", "mac"):
        raise ConfigurationError("add_convention must be 'tree' or 'mac'")
    dtypes = {**DEFAULT_DTYPES, **(dtypes or {})}
    res = resolution if resolution is not None else descriptor.get("resolution")
    if not isinstance(res, int) or res <= 0:
        raise UnsupportedShapeError("input resolution must be a static positive integer")
    h = w = res
    c = _int(descriptor, "in_channels")
    out = OpCount()
    saved: list[tuple[int, int, int]] = []
    for node in descriptor["nodes"]:
        kind = node["kind"]
        if kind in ("conv", "dwconv"):
            k, s = _int(node, "k"), _int(node, "stride")
            pad = node.get("padding", k // 2)
            groups = _int(node, "groups")
            cin, cout = _int(node, "cin"), _int(node, "cout")
            h = (h + 2 * pad - k) // s + 1
            w = (w + 2 * pad - k) // s + 1
            fan_in = cin // groups * k * k
            out.layers.append(LayerCount(node["name"], _layer_ops(node["family"], fan_in, cout * h * w,
                                                                 dtypes, add_convention)))
            out.params += cout * fan_in
            c = cout
        elif kind == "fc":
            din, dout = _int(node, "din"), _int(node, "dout")
            out.layers.append(LayerCount(node["name"], _layer_ops(node["family"], din, dout, dtypes,
                                                                 add_convention)))
            out.params += din * dout + dout
            c = dout
        elif kind == "bn":
            out.params += 2 * c
        elif kind == "gap":
            h = w = 1
        elif kind == "save":
            saved.append((c, h, w))
        elif kind == "residual":
            shape = saved.pop()
            if shape != (c, h, w):
                raise UnsupportedShapeError("residual branch shapes differ")
            out.layers.append(LayerCount("residual", Counter({("add", dtypes["mult"][1]): c * h * w})))
    return out


def energy(counts: OpCount | Counter | dict, table: EnergyTable | None = None) -> float:
    """Compute energy in mJ: ``sum(count * pJ) * 1e-9``."""
    table = table or EnergyTable()
    totals = counts.totals() if isinstance(counts, OpCount) else counts
    return sum(n * table[key] for key, n in totals.items() if n) * 1e-9


def latency_proxy(counts: OpCount | Counter | dict, throughput: dict[str, float] | None = None) -> float:
    """Milliseconds as ``sum(count / ops_per_ms)`` per operation kind."""
    tp = {**DEFAULT_THROUGHPUT, **(throughput or {})}
    for kind, v in tp.items():
        if not v > 0:
            raise ConfigurationError(f"throughput for {kind} must be positive")
    totals = counts.totals() if isinstance(counts, OpCount) else counts
    return sum(n / tp[kind] for (kind, _), n in totals.items())


def cost_report(descriptor: dict, resolution: int | None = None, table: EnergyTable | None = None,
                throughput: dict[str, float] | None = None, **count_kw) -> CostReport:
    counts = count_ops(descriptor, resolution, **count_kw)
    return CostReport(energy(counts, table), latency_proxy(counts, throughput), counts.params / 1e6,
                      counts.mults_m, counts.shifts_m, counts.adds_m)


def _make_divisible(v: float, divisor: int = 8) -> int:
    new = max(divisor, int(v + divisor / 2) // divisor * divisor)
    return new + divisor if new < 0.9 * v else new


def mobilenet_v2(width: float = 1.0, resolution: int = 224, num_classes: int = 1000,
                 family: str = "mult") -> dict:
    """Graph descriptor for the standard MobileNetV2 layout at a width multiplier."""
    settings = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    nodes = []

    def conv(name, cin, cout, k, s, groups=1):
        kind = "dwconv" if groups > 1 else "conv"
        nodes.extend([{"kind": kind, "name": name, "family": family, "cin": cin, "cout": cout, "k": k,
                       "stride": s, "padding": k // 2, "groups": groups},
                      {"kind": "bn", "name": f"{name}.bn"}])

    cin = _make_divisible(32 * width)
    conv("stem", 3, cin, 3, 2)
    i = 0
    for t, c, n, s in settings:
        cout = _make_divisible(c * width)
        for j in range(n):
            stride = s if j == 0 else 1
            res = stride == 1 and cin == cout
            if res:
                nodes.append({"kind": "save"})
            hidden = cin * t
            if t != 1:
                conv(f"blocks.{i}.expand", cin, hidden, 1, 1)
            conv(f"blocks.{i}.dw", hidden, hidden, 3, stride, groups=hidden)
            conv(f"blocks.{i}.project", hidden, cout, 1, 1)
            if res:
                nodes.append({"kind": "residual"})
            cin = cout
            i += 1
    last = _make_divisible(1280 * max(1.0, width))
    conv("last", cin, last, 1, 1)
    nodes += [{"kind": "gap"}, {"kind": "fc", "name": "head", "family": family, "din": last, "dout": num_classes}]
    return {"format": "mfaug-graph", "version": 1, "resolution": resolution, "in_channels": 3,
            "num_classes": num_classes, "nodes": nodes}
