"""Command-line entry point: ``mfaug {train,export,eval,search,cost}``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import cost as costmod
from .augment import (
    AugModel,
    ExportError,
    HWSContext,
    export_target,
    graph_descriptor,
    init_state,
    load_exported,
    run_epoch,
    save_exported,
)
from .checkpoint import CheckpointError, load_bank, read_checkpoint, restore, save_checkpoint
from .config import ConfigError, MetricsLog, RunConfig
from .data import Dataset, FormatError, ingest_dataset, synthetic_dataset
from .nas import HardwareLimits, SearchExhausted, SearchSpace, candidate_arch, evaluate_candidate, evolve, write_ledger
from .presets import build_remap_bank, get_method, method_arch
from .tensor import ConfigurationError


class CommandError(RuntimeError):
    pass


def load_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.path:
        return ingest_dataset(d.path)
    res = cfg.arch_spec().resolution
    return synthetic_dataset(d.synthetic_n, d.synthetic_classes, res, d.synthetic_seed, d.synthetic_noise)


def split_dataset(ds: Dataset, fraction: float) -> tuple[Dataset, Dataset]:
    if len(ds) < 2:
        raise CommandError("dataset needs at least two images to split into train and test")
    return ds.split(max(1, min(len(ds) - 1, int(round(fraction * len(ds))))))


def cmd_train(cfg: RunConfig, resume: bool = False, log=print) -> Path:
    """Train per config; checkpoint and metrics row after every epoch. Returns the checkpoint path."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    train_ds, test_ds = split_dataset(load_dataset(cfg), cfg.data.train_fraction)
    if train_ds.resolution != cfg.arch_spec().resolution:
        raise CommandError(f"dataset resolution {train_ds.resolution} does not match the architecture "
                           f"({cfg.arch_spec().resolution})")
    x, y = train_ds.arrays()
    xt, yt = test_ds.arrays()
    n_cls = cfg.arch_spec().num_classes
    if max(y.max(), yt.max()) >= n_cls or min(y.min(), yt.min()) < 0:
        raise CommandError(f"dataset labels fall outside [0, {n_cls}) for this architecture")
    method = get_method(cfg.method)
    tcfg = replace(cfg.train_config(), augment=method.augment, reorder=method.reorder)
    ckpt = out / "checkpoint.npz"
    metrics = MetricsLog(out / "metrics.csv")
    meta = arrays = None
    if resume and ckpt.exists():
        meta, arrays = read_checkpoint(ckpt)
        bank = load_bank(arrays)
    elif method.hws:
        bank_cfg = tcfg if cfg.bank_epochs is None else replace(tcfg, epochs=cfg.bank_epochs)
        bank = build_remap_bank(cfg.arch_spec(), x, y, bank_cfg, family=method.family)
    else:
        bank = {}
    ctx = HWSContext(bank if method.hws else None, cfg.hws_mode)
    model = AugModel(method_arch(method, cfg.arch_spec()), seed=tcfg.seed, hws_ctx=ctx)
    state = init_state(model, tcfg, len(x))
    if meta is not None:
        restore(state, meta, arrays)
        metrics.truncate(state.epoch)
        log(f"resumed at epoch {state.epoch}")
    elif metrics.path.exists():
        metrics.path.unlink()
        metrics.timing.unlink(missing_ok=True)
        metrics = MetricsLog(metrics.path)
    while state.epoch < tcfg.epochs:
        rec = run_epoch(state, x, y, xt, yt)
        save_checkpoint(state, ckpt, cfg.to_dict(), bank)
        metrics.append(rec)
        log(f"epoch {rec.epoch}: loss_t={rec.loss_target:.4f} loss_a={rec.loss_aug:.4f} "
            f"acc={rec.accuracy:.4f} lr={rec.lr:.5f}")
    return ckpt


def model_from_checkpoint(path) -> tuple[AugModel, RunConfig]:
    meta, arrays = read_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    method = get_method(cfg.method)
    bank = load_bank(arrays)
    model = AugModel(method_arch(method, cfg.arch_spec()), seed=0,
                     hws_ctx=HWSContext(bank if method.hws else None, cfg.hws_mode))
    state = init_state(model, cfg.train_config(), 1)
    restore(state, meta, arrays)
    if meta["epoch"] < cfg.train_config().epochs:
        raise CommandError(f"checkpoint is at epoch {meta['epoch']} of {cfg.train_config().epochs}; "
                           "finish training before exporting")
    return model, cfg


def cmd_export(checkpoint, output) -> Path:
    model, _ = model_from_checkpoint(checkpoint)
    try:
        exp = export_target(model)
    except ExportError as exc:
        raise CommandError(f"cannot export: {exc}") from None
    save_exported(exp, output)
    return Path(output)


def cmd_eval(model_file, dataset: Dataset, integer: bool = True) -> tuple[float, costmod.CostReport]:
    if len(dataset) == 0:
        raise CommandError("evaluation dataset is empty")
    exp = load_exported(model_file)
    if dataset.resolution != exp.resolution:
        raise CommandError(f"dataset resolution {dataset.resolution} does not match the model ({exp.resolution})")
    x, y = dataset.arrays()
    acc = float((exp.predict(x, integer=integer) == y).mean())
    return acc, costmod.cost_report(exp.descriptor)


def cmd_cost(descriptor: dict, resolution: int | None = None) -> costmod.CostReport:
    return costmod.cost_report(descriptor, resolution)


def load_descriptor(source: str) -> dict:
    """A JSON graph descriptor file, an exported model file, a run config, or ``mobilenetv2-<width>``."""
    if source.startswith("mobilenetv2"):
        width = float(source.split("-", 1)[1]) if "-" in source else 1.0
        return costmod.mobilenet_v2(width)
    p = Path(source)
    if not p.exists():
        raise CommandError(f"{source} is neither a file nor a built-in descriptor (mobilenetv2-<width>)")
    raw = p.read_bytes()
    if raw[:4] == b"MFAX":
        return load_exported(p).descriptor
    d = json.loads(raw)
    if "nodes" in d:
        return d
    cfg = RunConfig.from_dict(d)
    return graph_descriptor(AugModel(method_arch(get_method(cfg.method), cfg.arch_spec())))


def cmd_search(config_path, output_dir, log=print) -> Path:
    """Run the evolution from a search config; writes the ledger and train configs for the top candidates."""
    scfg = json.loads(Path(config_path).read_text())
    space = SearchSpace.from_dict(scfg["space"])
    limits = HardwareLimits(**scfg.get("limits", {}))
    budget = scfg.get("budget", {})
    seed = int(scfg.get("seed", 0))
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fitness = scfg.get("fitness", "accuracy")
    data = None
    if fitness == "accuracy":
        ds = synthetic_dataset(budget.get("samples", 600), space.num_classes, space.resolution, seed)
        tr, va = split_dataset(ds, 0.75)
        data = (tr.arrays(), va.arrays())
        fn = None
    elif fitness == "neg_energy":
        def fn(c):
            return -c.cost.energy_mj
    else:
        raise ConfigError(f"unknown fitness {fitness!r}; use 'accuracy' or 'neg_energy'")

    def evaluator(c):
        return evaluate_candidate(c, space, limits, data, budget.get("epochs", 1), seed, fn)

    result = evolve(space, budget.get("population", 8), budget.get("generations", 4), seed, evaluator, limits)
    ledger = out / "ledger.csv"
    write_ledger(result.evaluated, ledger)
    for i, cand in enumerate(result.ranked[: budget.get("top_k", 3)]):
        arch = candidate_arch(space, cand.genes)
        RunConfig(method="AugShift", arch=arch.to_dict(), output_dir=str(out / f"top{i}")).dump(out / f"top{i}.json")
        log(f"#{i} fitness={cand.fitness:.4f} energy={cand.cost.energy_mj:.3e} mJ genes={list(cand.genes)}")
    return ledger


def _threads() -> None:
    n = os.environ.get("MFAUG_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfaug", description="Hybrid-augmented training of multiplication-free tiny networks")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--resume", action="store_true", help="continue from the output directory's checkpoint")
    t.add_argument("--output-dir", help="override the config's output directory")
    e = sub.add_parser("export", help="export the target part of a finished checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("-o", "--output", default="model.mfax")
    v = sub.add_parser("eval", help="accuracy and cost of an exported model")
    v.add_argument("model")
    v.add_argument("dataset", help="dataset directory, or 'synthetic:<n>:<classes>:<seed>'")
    v.add_argument("--float", action="store_true", help="use the float path instead of integer shifts")
    s = sub.add_parser("search", help="evolutionary architecture search")
    s.add_argument("config")
    s.add_argument("-o", "--output-dir", default="search")
    c = sub.add_parser("cost", help="operation counts, energy and latency proxy")
    c.add_argument("descriptor", help="graph JSON, exported model, run config or mobilenetv2-<width>")
    c.add_argument("-r", "--resolution", type=int)
    c.add_argument("--csv", action="store_true")
    return p


def _eval_dataset(source: str, resolution: int) -> Dataset:
    if source.startswith("synthetic:"):
        n, classes, seed = (int(v) for v in source.split(":")[1:4])
        return synthetic_dataset(n, classes, resolution, seed)
    return ingest_dataset(source)


def main(argv=None) -> int:
    _threads()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = RunConfig.load(args.config)
            if args.output_dir:
                cfg.output_dir = args.output_dir
            print(cmd_train(cfg, args.resume))
        elif args.command == "export":
            print(cmd_export(args.checkpoint, args.output))
        elif args.command == "eval":
            exp = load_exported(args.model)
            acc, report = cmd_eval(args.model, _eval_dataset(args.dataset, exp.resolution), not args.float)
            print(f"top-1 accuracy {acc:.4f}")
            print(report.to_text())
        elif args.command == "search":
            print(cmd_search(args.config, args.output_dir))
        elif args.command == "cost":
            report = cmd_cost(load_descriptor(args.descriptor), args.resolution)
            print(report.to_csv() if args.csv else report.to_text(), end="\n" if not args.csv else "")
    except (CommandError, ConfigError, CheckpointError, FormatError, ExportError, SearchExhausted,
            ConfigurationError, FileNotFoundError) as exc:
        print(f"mfaug {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
