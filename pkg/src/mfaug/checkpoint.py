"""Training checkpoints: one ``.npz`` holding arrays plus a JSON metadata entry."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import hws
from .augment import EpochRecord, TrainState

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: TrainState, path, config: dict | None = None,
                    bank: dict[str, hws.RemapNet] | None = None) -> None:
    arrays = {f"model/{k}": v for k, v in state.model.state_dict().items()}
    arrays.update({f"optim/{k}": v for k, v in state.optimizer.state_arrays().items()})
    for key, net in (bank or {}).items():
        for name, value in net.to_record().items():
            arrays[f"remap/{key}/{name}"] = value
    meta = {
        "format": "mfaug-checkpoint", "version": CHECKPOINT_VERSION, "epoch": state.epoch,
        "optim_step": state.optimizer.state.step, "flip_steps": state.flip_steps,
        "steps_per_epoch": state.steps_per_epoch,
        "partitions": [[g.name, g.c_t, g.c_a] for g in state.model.groups],
        "mutated": [layer.mutated for layer in state.model.aug_layers()],
        "history": [vars(r) for r in state.history], "config": config or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    tmp = Path(str(path) + ".tmp")
    with tmp.open("wb") as f:
        np.savez(f, **arrays)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist") from None
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"checkpoint {path} is unreadable: {exc}") from None
    if "meta" not in arrays:
        raise CheckpointError(f"{path} has no metadata entry")
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    if meta.get("format") != "mfaug-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
    return meta, arrays


def load_bank(arrays: dict[str, np.ndarray]) -> dict[str, hws.RemapNet]:
    records: dict[str, dict] = {}
    for k, v in arrays.items():
        if k.startswith("remap/"):
            _, key, name = k.split("/")
            records.setdefault(key, {})[name] = v
    return {key: hws.RemapNet.from_record(rec) for key, rec in records.items()}


def restore(state: TrainState, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    groups = [[g.name, g.c_t, g.c_a] for g in state.model.groups]
    if groups != meta["partitions"]:
        raise CheckpointError("checkpoint partitions do not match the configured architecture")
    state.model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model/")})
    state.optimizer.load_state_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("optim/")})
    state.optimizer.state.step = meta["optim_step"]
    state.epoch = meta["epoch"]
    state.flip_steps = list(meta["flip_steps"])
    for layer, m in zip(state.model.aug_layers(), meta["mutated"]):
        layer.mutated = m
    state.history = [EpochRecord(**r) for r in meta["history"]]
