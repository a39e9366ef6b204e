"""Standalone multiplication-free model built from the target slices.

File layout (little-endian)::

    magic b"MFAX" | u16 version | u32 len | graph descriptor (JSON, utf-8)
    u32 n_records | n x packed 5-bit layer record (see mfaug.mfops.packing)
    u32 len | npz archive of float tensors (BN, bias, add/mult weights)
    u32 CRC32 of everything above
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..mfops import (
    PowTwoWeight,
    quantize_pow2,
    read_layer,
    shift_conv_eval,
    shift_linear,
    shift_linear_eval,
    write_layer,
)
from ..tensor import ConfigurationError, Tensor
from ..tensor import functional as F
from .layers import AugBatchNorm, AugFC, AugLayer, mf_conv
from .model import AugModel, _act

MAGIC = b"MFAX"
FORMAT_VERSION = 1
GRAPH_FORMAT = "mfaug-graph"


class ExportError(ValueError):
    pass


class ChecksumError(ExportError):
    pass


def _conv_node(layer: AugLayer, kind: str) -> dict:
    node = {"kind": kind, "name": layer.layer_id, "family": layer.active_family}
    if kind == "fc":
        node.update(din=layer.cin_t, dout=layer.c_t)
        return node
    groups = layer.c_t if kind == "dwconv" else 1
    node.update(cin=layer.cin_t, cout=layer.c_t, k=layer.k, stride=layer.stride,
                padding=layer.padding, groups=groups)
    return node


def graph_descriptor(model: AugModel) -> dict:
    """Target-only graph: the network a deployed device actually runs."""
    arch = model.arch
    nodes: list[dict] = [_conv_node(model.stem, "conv"), {"kind": "bn", "name": "stem_bn"},
                         {"kind": "act", "fn": arch.act}]
    for blk in model.blocks:
        if blk.spec.depth_aug:
            continue
        b = blk.block_id
        if blk.residual:
            nodes.append({"kind": "save"})
        nodes += [_conv_node(blk.expand, "conv"), {"kind": "bn", "name": f"{b}.bn1"},
                  {"kind": "act", "fn": arch.act},
                  _conv_node(blk.dw, "dwconv"), {"kind": "bn", "name": f"{b}.bn2"},
                  {"kind": "act", "fn": arch.act},
                  _conv_node(blk.project, "conv"), {"kind": "bn", "name": f"{b}.bn3"}]
        if blk.residual:
            nodes.append({"kind": "residual"})
    nodes += [{"kind": "gap"}, _conv_node(model.head, "fc")]
    return {"format": GRAPH_FORMAT, "version": FORMAT_VERSION, "resolution": arch.resolution,
            "in_channels": arch.in_channels, "num_classes": arch.num_classes, "nodes": nodes}


def _check_alignment(desc: dict) -> None:
    c = desc["in_channels"]
    saved = []
    for node in desc["nodes"]:
        kind = node["kind"]
        if kind in ("conv", "dwconv"):
            if node["cin"] != c:
                raise ExportError(f"{node['name']}: expects {node['cin']} channels, previous layer gives {c}")
            c = node["cout"]
        elif kind == "fc":
            if node["din"] != c:
                raise ExportError(f"{node['name']}: expects {node['din']} features, previous layer gives {c}")
            c = node["dout"]
        elif kind == "save":
            saved.append(c)
        elif kind == "residual" and saved.pop() != c:
            raise ExportError("residual branch changes the channel count")


@dataclass
class ExportedModel:
    """Deployable model: power-of-two codes for shift layers, floats for the rest."""

    descriptor: dict
    codes: dict[str, PowTwoWeight] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return self.descriptor["resolution"]

    def weight(self, name: str) -> np.ndarray:
        if name in self.codes:
            return self.codes[name].dequantize(self.tensors[f"{name}.dtype_ref"].dtype)
        return self.tensors[f"{name}.weight"]

    def _conv(self, node: dict, h: Tensor, integer: bool) -> Tensor:
        name, fam = node["name"], node["family"]
        if integer and fam == "shift":
            return shift_conv_eval(h, self.codes[name], node["stride"], node["padding"], node["groups"],
                                   layer_id=name)
        return mf_conv(h, Tensor(self.weight(name)), fam, node["stride"], node["padding"], node["groups"])

    def _fc(self, node: dict, h: Tensor, integer: bool) -> Tensor:
        name = node["name"]
        b = Tensor(self.tensors[f"{name}.bias"])
        if integer and node["family"] == "shift":
            return shift_linear_eval(h, self.codes[name], b, layer_id=name)
        w = Tensor(self.weight(name))
        if node["family"] == "shift":
            return shift_linear(h, w, b)
        return F.linear(h, w, b)

    def forward(self, x, integer: bool = False) -> Tensor:
        """Logits; ``integer=True`` evaluates shift layers on the integer shift path."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.shape[1] != self.descriptor["in_channels"] or h.shape[-1] != self.resolution:
            raise ConfigurationError(
                f"input {h.shape} does not match descriptor ({self.descriptor['in_channels']} x "
                f"{self.resolution} x {self.resolution})")
        stack = []
        for node in self.descriptor["nodes"]:
            kind = node["kind"]
            if kind in ("conv", "dwconv"):
                h = self._conv(node, h, integer)
            elif kind == "bn":
                n = node["name"]
                t = self.tensors
                h = F.batch_norm(h, Tensor(t[f"{n}.gamma"]), Tensor(t[f"{n}.beta"]), t[f"{n}.mean"],
                                 t[f"{n}.var"], training=False, eps=float(t[f"{n}.eps"]))
            elif kind == "act":
                h = _act(node["fn"], h)
            elif kind == "save":
                stack.append(h)
            elif kind == "residual":
                h = stack.pop() + h
            elif kind == "gap":
                h = F.global_avg_pool(h)
            elif kind == "fc":
                h = self._fc(node, h, integer)
        return h

    __call__ = forward

    def predict(self, x: np.ndarray, integer: bool = False, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size], integer).data.argmax(axis=1)
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def export_target(model: AugModel) -> ExportedModel:
    """Slice, remap and quantize the target part into a standalone model."""
    for layer in model.aug_layers():
        if not layer.mutated and layer.family != "mult":
            raise ExportError(f"{layer.layer_id} is still multiplicative; the mutation schedule has not finished")
    was = model.training
    model.eval()
    desc = graph_descriptor(model)
    _check_alignment(desc)
    exp = ExportedModel(desc)
    for layer in model.aug_layers():
        if _is_depth_aug(model, layer):
            continue
        w = layer.mf_weight().data
        if layer.active_family == "shift":
            exp.codes[layer.layer_id] = quantize_pow2(w, *layer.p_range)
            exp.tensors[f"{layer.layer_id}.dtype_ref"] = np.zeros(0, dtype=w.dtype)
        else:
            exp.tensors[f"{layer.layer_id}.weight"] = np.array(w)
        if isinstance(layer, AugFC):
            exp.tensors[f"{layer.layer_id}.bias"] = np.array(layer.bias.data)
    for name, bn in _norms(model):
        exp.tensors[f"{name}.gamma"] = np.array(bn.gamma.data[: bn.c_t])
        exp.tensors[f"{name}.beta"] = np.array(bn.beta.data[: bn.c_t])
        exp.tensors[f"{name}.mean"] = bn.target_mean.copy()
        exp.tensors[f"{name}.var"] = bn.target_var.copy()
        exp.tensors[f"{name}.eps"] = np.array(bn.eps)
    model.train(was)
    return exp


def _is_depth_aug(model: AugModel, layer: AugLayer) -> bool:
    return any(blk.spec.depth_aug and layer in blk.aug_layers() for blk in model.blocks)


def _norms(model: AugModel) -> list[tuple[str, AugBatchNorm]]:
    out = [("stem_bn", model.stem_bn)]
    for blk in model.blocks:
        if not blk.spec.depth_aug:
            out += [(f"{blk.block_id}.bn{i}", bn) for i, bn in enumerate((blk.bn1, blk.bn2, blk.bn3), 1)]
    return out


def to_bytes(exp: ExportedModel) -> bytes:
    desc = json.dumps(exp.descriptor, sort_keys=True).encode()
    out = bytearray(MAGIC + struct.pack("<HI", FORMAT_VERSION, len(desc)) + desc)
    out += struct.pack("<I", len(exp.codes))
    for name in sorted(exp.codes):
        out += write_layer(name, exp.codes[name])
    buf = io.BytesIO()
    np.savez(buf, **{k: exp.tensors[k] for k in sorted(exp.tensors)})
    blob = buf.getvalue()
    out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def from_bytes(data: bytes) -> ExportedModel:
    if len(data) < 14 or data[:4] != MAGIC:
        raise ExportError("not an exported model file (bad magic)")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise ChecksumError("checksum mismatch: the file is corrupted")
    version, dlen = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise ExportError(f"unsupported export version {version}")
    off = 10
    desc = json.loads(data[off : off + dlen].decode())
    off += dlen
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    codes = {}
    for _ in range(n):
        name, qw, off = read_layer(data, off)
        codes[name] = qw
    (blen,) = struct.unpack_from("<I", data, off)
    off += 4
    with np.load(io.BytesIO(data[off : off + blen])) as z:
        tensors = {k: z[k] for k in z.files}
    return ExportedModel(desc, codes, tensors)


def save_exported(exp: ExportedModel, path) -> None:
    Path(path).write_bytes(to_bytes(exp))


def load_exported(path) -> ExportedModel:
    return from_bytes(Path(path).read_bytes())
