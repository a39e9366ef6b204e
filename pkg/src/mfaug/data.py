"""Image dataset container format and a seeded synthetic generator.

Image file (``.mfi``)::

    magic b"MFIM" | u16 width | u16 height | u8 channels | H*W*C u8 pixels (row-major, HWC)

Dataset directory::

    index.txt          first line "mfaug-dataset <version> <count>",
                       then one "relative/path.mfi <label>" line per image
    <class_name>/...   one subdirectory per class
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = b"MFIM"
HEADER = struct.Struct("<4sHHB")
DATASET_VERSION = 1
MEAN, STD = 0.5, 0.25


class FormatError(ValueError):
    def __init__(self, message: str, path=None, offset: int | None = None):
        where = f" ({path}" + (f", byte {offset}" if offset is not None else "") + ")" if path else ""
        super().__init__(message + where)
        self.offset = offset


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) uint8
    labels: np.ndarray  # (N,) int64
    classes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def resolution(self) -> int:
        return self.images.shape[1]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalized float32 NCHW inputs and integer labels."""
        x = (self.images.astype(np.float32) / 255.0 - MEAN) / STD
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2)), self.labels

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        a = Dataset(self.images[:n_first], self.labels[:n_first], self.classes)
        b = Dataset(self.images[n_first:], self.labels[n_first:], self.classes)
        return a, b


def encode_image(img: np.ndarray) -> bytes:
    h, w, c = img.shape
    return HEADER.pack(IMAGE_MAGIC, w, h, c) + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def decode_image(buf: bytes, path=None) -> np.ndarray:
    if len(buf) < HEADER.size:
        raise FormatError("truncated image header", path, len(buf))
    magic, w, h, c = HEADER.unpack_from(buf)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"bad magic {magic!r}", path, 0)
    if c not in (1, 3) or w == 0 or h == 0:
        raise FormatError(f"unsupported image geometry {w}x{h}x{c}", path, 4)
    need = HEADER.size + w * h * c
    if len(buf) != need:
        raise FormatError(f"expected {need} bytes, found {len(buf)}", path, min(len(buf), need))
    return np.frombuffer(buf, dtype=np.uint8, offset=HEADER.size).reshape(h, w, c).copy()


def write_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    classes = ds.classes or [f"class_{i}" for i in range(int(ds.labels.max()) + 1)]
    lines = [f"mfaug-dataset {DATASET_VERSION} {len(ds)}"]
    counters: dict[int, int] = {}
    for img, label in zip(ds.images, ds.labels):
        label = int(label)
        k = counters.get(label, 0)
        counters[label] = k + 1
        rel = f"{classes[label]}/{k:06d}.mfi"
        (root / classes[label]).mkdir(parents=True, exist_ok=True)
        (root / rel).write_bytes(encode_image(img))
        lines.append(f"{rel} {label}")
    (root / "index.txt").write_text("\n".join(lines) + "\n")


def ingest_dataset(path) -> Dataset:
    root = Path(path)
    index = root / "index.txt"
    if not index.is_file():
        raise FileNotFoundError(f"no index.txt in dataset directory {root}")
    lines = index.read_text().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != "mfaug-dataset":
        raise FormatError("index.txt must start with 'mfaug-dataset <version> <count>'", index)
    if int(head[1]) != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {head[1]}", index)
    entries = [ln.rsplit(" ", 1) for ln in lines[1:] if ln.strip()]
    if len(entries) != int(head[2]):
        raise FormatError(f"index declares {head[2]} images but lists {len(entries)}", index)
    if not entries:
        raise FormatError("dataset is empty", index)
    images, labels = [], []
    for rel, label in entries:
        p = root / rel
        images.append(decode_image(p.read_bytes(), p))
        labels.append(int(label))
    if len({im.shape for im in images}) != 1:
        raise FormatError("images differ in size", root)
    n_classes = max(labels) + 1
    names = {}
    for rel, label in entries:
        names.setdefault(int(label), rel.split("/")[0])
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64),
                   [names.get(i, f"class_{i}") for i in range(n_classes)])


def synthetic_dataset(n: int, num_classes: int = 2, resolution: int = 32, seed: int = 0,
                      noise: float = 0.35, jitter: float = 0.25) -> Dataset:
    """Oriented colour gratings, one orientation/frequency/tint per class, with noise and occluders.

    Identical arguments always give identical bytes.
    """
    rng = np.random.default_rng(seed)
    proto = np.random.default_rng(1_000_003)  # class prototypes do not depend on the sample seed
    angles = np.pi * np.arange(num_classes) / num_classes
    freqs = proto.uniform(1.5, 4.0, num_classes)
    tints = proto.uniform(0.2, 1.0, (num_classes, 3))
    labels = rng.integers(0, num_classes, n)
    yy, xx = np.mgrid[0:resolution, 0:resolution] / resolution
    imgs = np.empty((n, resolution, resolution, 3), dtype=np.uint8)
    for i, c in enumerate(labels):
        theta = angles[c] + rng.normal(0, jitter * np.pi / num_classes)
        f = freqs[c] * (1 + rng.normal(0, 0.1))
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * f * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        tint = np.clip(tints[c] + rng.normal(0, 0.15, 3), 0, 1)
        img = 0.5 + 0.35 * rng.uniform(0.5, 1.0) * wave[..., None] * tint
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.25)
        blob = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        img[blob] = rng.uniform(0, 1, 3)
        img = img + rng.normal(0, noise * 0.25, img.shape)
        imgs[i] = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    return Dataset(imgs, labels.astype(np.int64), [f"class_{i}" for i in range(num_classes)])
