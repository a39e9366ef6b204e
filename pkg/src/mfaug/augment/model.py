"""Augmented inverted-bottleneck model and channel-group bookkeeping."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..tensor import ConfigurationError, Module, NonFiniteError, Tensor
from ..tensor import functional as F
from .layers import AugBatchNorm, AugConv, AugDWConv, AugFC, AugLayer, HWSContext, aug_channels


@dataclass
class BlockSpec:
    cout: int
    expand: int = 3
    stride: int = 1
    k: int = 3
    family: str | None = None  # None: model default
    depth_aug: bool = False


@dataclass
class ArchSpec:
    """Static description of the target network (widths before augmentation)."""

    stem: int = 8
    blocks: list[BlockSpec] = field(default_factory=list)
    num_classes: int = 10
    in_channels: int = 3
    stem_stride: int = 2
    family: str = "shift"
    aug_family: str = "mult"
    width_aug: float = 1.0
    expand_aug: float = 1.0
    act: str = "relu"
    resolution: int = 32
    head_family: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["blocks"] = [BlockSpec(**b) for b in d.get("blocks", [])]
        return cls(**d)


@dataclass
class ChannelGroup:
    """Channels that must be permuted together during reordering."""

    name: str
    c_t: int
    c_a: int
    producers: list[AugLayer] = field(default_factory=list)  # output channels in this group
    consumers: list[AugLayer] = field(default_factory=list)  # input channels in this group
    depthwise: list[AugLayer] = field(default_factory=list)
    norms: list[AugBatchNorm] = field(default_factory=list)


def _act(name: str, x: Tensor) -> Tensor:
    return F.hard_swish(x) if name == "hswish" else F.relu(x)


class Block(Module):
    def __init__(self, spec: BlockSpec, cin: tuple[int, int], cout: tuple[int, int],
                 hidden: tuple[int, int], family: str, act: str, rng, block_id: str):
        self.spec, self.act, self.block_id = spec, act, block_id
        if spec.depth_aug:
            family = "mult"  # depth augmentation is never exported
        self.expand = AugConv(cin[0], cin[1], hidden[0], hidden[1], 1, 1, family, rng, f"{block_id}.expand")
        self.bn1 = AugBatchNorm(*hidden)
        self.dw = AugDWConv(hidden[0], hidden[1], spec.k, spec.stride, family, rng, f"{block_id}.dw")
        self.bn2 = AugBatchNorm(*hidden)
        self.project = AugConv(hidden[0], hidden[1], cout[0], cout[1], 1, 1, family, rng, f"{block_id}.project")
        self.bn3 = AugBatchNorm(*cout)
        self.residual = spec.stride == 1 and cin == cout
        if spec.depth_aug and not self.residual:
            raise ConfigurationError(f"{block_id}: depth-augmentation blocks need a residual path")
        self.depth_weight = 1.0

    def aug_layers(self) -> list[AugLayer]:
        return [self.expand, self.dw, self.project]

    def forward(self, x: Tensor, augmented: bool) -> Tensor:
        h = _act(self.act, self.bn1(self.expand(x, augmented), augmented))
        h = _act(self.act, self.bn2(self.dw(h, augmented), augmented))
        h = self.bn3(self.project(h, augmented), augmented)
        if not self.residual:
            return h
        if self.spec.depth_aug and self.depth_weight != 1.0:
            h = h * self.depth_weight
        return x + h


class AugModel(Module):
    """Wide hybrid model; ``forward(x, augmented=False)`` runs only the target slices."""

    def __init__(self, arch: ArchSpec, seed: int = 0, hws_ctx: HWSContext | None = None,
                 check_finite: bool = True):
        rng = np.random.default_rng(seed)
        self.arch = arch
        self.check_finite = check_finite
        self.hws_ctx = hws_ctx or HWSContext()
        fam = arch.family

        def part(c, mult):
            return (c, aug_channels(c, mult))

        stem = part(arch.stem, arch.width_aug)
        self.stem = AugConv(arch.in_channels, 0, stem[0], stem[1], 3, arch.stem_stride, fam, rng, "stem")
        self.stem_bn = AugBatchNorm(*stem)
        self.groups: list[ChannelGroup] = []
        stream = ChannelGroup("stem", *stem, producers=[self.stem], norms=[self.stem_bn])
        self.groups.append(stream)
        self.blocks: list[Block] = []
        cin = stem
        for i, bs in enumerate(arch.blocks):
            cout = part(bs.cout, arch.width_aug)
            hidden = part(cin[0] * bs.expand, arch.expand_aug)
            blk = Block(bs, cin, cout, hidden, bs.family or fam, arch.act, rng, f"blocks.{i}")
            self.blocks.append(blk)
            stream.consumers.append(blk.expand)
            hid = ChannelGroup(f"blocks.{i}.hidden", *hidden, producers=[blk.expand, blk.dw],
                               consumers=[blk.project], depthwise=[blk.dw], norms=[blk.bn1, blk.bn2])
            self.groups.append(hid)
            if not blk.residual:
                stream = ChannelGroup(f"blocks.{i}.out", *cout)
                self.groups.append(stream)
            stream.producers.append(blk.project)
            stream.norms.append(blk.bn3)
            cin = cout
        self.head = AugFC(cin[0], cin[1], arch.num_classes, arch.head_family or fam, rng)
        stream.consumers.append(self.head)
        for layer in self.aug_layers():
            layer.aug_family = arch.aug_family
            layer.hws_ctx = self.hws_ctx

    def aug_layers(self) -> list[AugLayer]:
        out: list[AugLayer] = [self.stem]
        for b in self.blocks:
            out.extend(b.aug_layers())
        out.append(self.head)
        return out

    def mutation_units(self) -> list[list[AugLayer]]:
        """Layers that flip to multiplication-free together, shallow to deep."""
        units = [[self.stem]]
        units += [b.aug_layers() for b in self.blocks if not b.spec.depth_aug]
        units.append([self.head])
        return units

    def set_hws(self, ctx: HWSContext) -> None:
        self.hws_ctx = ctx
        for layer in self.aug_layers():
            layer.hws_ctx = ctx

    def _guard(self, t: Tensor, layer_id: str) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(t.data)):
            raise NonFiniteError("non-finite activation", layer_id=layer_id)
        return t

    def features(self, x: Tensor, augmented: bool = False) -> Tensor:
        h = _act(self.arch.act, self.stem_bn(self.stem(x, augmented), augmented))
        h = self._guard(h, "stem")
        for blk in self.blocks:
            if blk.spec.depth_aug and not augmented:
                continue
            h = self._guard(blk(h, augmented), blk.block_id)
        return F.global_avg_pool(h)

    def forward(self, x: Tensor, augmented: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        return self._guard(self.head(self.features(x, augmented), augmented), "head")

    def target_parameter_count(self) -> int:
        n = 0
        for layer in self.aug_layers():
            n += int(np.prod(layer.target_weight().shape))
        n += self.arch.num_classes
        for m in self.modules():
            if isinstance(m, AugBatchNorm):
                n += 2 * m.c_t
        return n
