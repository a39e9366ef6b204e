"""Run configuration and the append-only metrics log."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import ArchSpec, TrainConfig
from .presets import METHODS, desk_arch

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str | None = None  # dataset directory; None uses the synthetic generator
    synthetic_n: int = 4000
    synthetic_classes: int = 10
    synthetic_seed: int = 0
    synthetic_noise: float = 0.8
    train_fraction: float = 0.75


@dataclass
class RunConfig:
    method: str = "AugShift"
    arch: dict = field(default_factory=lambda: desk_arch().to_dict())
    data: DataConfig = field(default_factory=DataConfig)
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    hws_mode: str = "bias"
    bank_epochs: int | None = None  # remapper pretraining epochs; None = same as training
    output_dir: str = "run"
    version: int = CONFIG_VERSION

    def train_config(self) -> TrainConfig:
        known = {f.name for f in fields(TrainConfig)}
        bad = set(self.train) - known
        if bad:
            raise ConfigError(f"unknown training options {sorted(bad)}; valid: {sorted(known)}")
        t = dict(self.train)
        if t.get("mutation") is not None:
            t["mutation"] = tuple(t["mutation"])
        return TrainConfig(**t)

    def arch_spec(self) -> ArchSpec:
        try:
            return ArchSpec.from_dict(self.arch)
        except TypeError as exc:
            raise ConfigError(f"invalid architecture descriptor: {exc}") from None

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is not supported (expected {CONFIG_VERSION})")
        cfg = self.train_config()
        if cfg.epochs < 1 or cfg.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 < self.data.train_fraction < 1:
            raise ConfigError("data.train_fraction must be in (0, 1)")
        self.arch_spec()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys {sorted(bad)}; valid: {sorted(known)}")
        if "data" in d:
            try:
                d["data"] = DataConfig(**d["data"])
            except TypeError as exc:
                raise ConfigError(f"invalid data section: {exc}") from None
        return cls(**d).validate()

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)


METRIC_FIELDS = ["epoch", "loss_target", "loss_aug", "accuracy", "lr"]


class MetricsLog:
    """Per-epoch CSV, append-only with strictly increasing epochs.

    Wall-clock times go to a sibling ``timing.csv`` so the metrics file itself
    is reproducible byte for byte.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.timing = self.path.with_name("timing.csv")
        self.last_epoch = 0
        if self.path.exists():
            rows = self.rows()
            self.last_epoch = int(rows[-1]["epoch"]) if rows else 0

    def rows(self) -> list[dict]:
        with self.path.open() as f:
            return list(csv.DictReader(f))

    def truncate(self, epoch: int) -> None:
        """Drop rows after ``epoch`` (used when resuming from an older checkpoint)."""
        for path in (self.path, self.timing):
            if not path.exists():
                continue
            with path.open() as f:
                rows = list(csv.reader(f))
            keep = rows[:1] + [r for r in rows[1:] if int(r[0]) <= epoch]
            with path.open("w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerows(keep)
        self.last_epoch = min(self.last_epoch, epoch)

    def append(self, rec) -> None:
        if rec.epoch <= self.last_epoch:
            raise ValueError(f"epoch {rec.epoch} is not after {self.last_epoch}")
        new = not self.path.exists()
        with self.path.open("a", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            if new:
                w.writerow(METRIC_FIELDS)
            w.writerow([rec.epoch, repr(rec.loss_target), repr(rec.loss_aug), repr(rec.accuracy), repr(rec.lr)])
        new = not self.timing.exists()
        with self.timing.open("a", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            if new:
                w.writerow(["epoch", "wall_time_s"])
            w.writerow([rec.epoch, f"{rec.wall_time:.3f}"])
        self.last_epoch = rec.epoch
