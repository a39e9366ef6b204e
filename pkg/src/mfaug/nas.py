"""Two-stage evolutionary search: depth-augmented SubNet, feasible TargetNet, block mutation.

A candidate is a flat tuple of gene indices laid out by :meth:`SearchSpace.layout`:
per stage a target depth and a SubNet depth (layers between the two are depth
augmentation), one block type per SuperNet layer, then the width multiple,
expand multiple and mutation window. Target layers are a contiguous prefix of
each stage.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .augment import ArchSpec, AugModel, BlockSpec, TrainConfig, evaluate, graph_descriptor, train
from .augment.train import flip_schedule
from .cost import CostReport, cost_report
from .tensor import ConfigurationError, NonFiniteError


class InvalidCandidate(ValueError):
    pass


class SearchExhausted(RuntimeError):
    pass


@dataclass
class StageSpec:
    cout: int
    stride: int = 1
    max_depth: int = 2
    expand: int = 3


@dataclass
class SearchSpace:
    stages: list[StageSpec]
    block_types: tuple[str, ...] = ("mult", "shift", "add")
    width_mults: tuple[float, ...] = (2.2, 2.4, 2.8, 3.2)
    expand_mults: tuple[float, ...] = (2.2, 2.4, 2.8, 3.2)
    mutation_starts: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)
    mutation_stops: tuple[float, ...] = (0.5, 0.6, 0.7)
    stem: int = 8
    stem_family: str = "shift"
    num_classes: int = 10
    resolution: int = 32

    @property
    def n_layers(self) -> int:
        return sum(s.max_depth for s in self.stages)

    def layout(self) -> list[tuple[str, int]]:
        genes = []
        for i, s in enumerate(self.stages):
            genes += [(f"stage{i}.target", s.max_depth), (f"stage{i}.sub", s.max_depth)]
        genes += [(f"layer{j}.type", len(self.block_types)) for j in range(self.n_layers)]
        genes += [("width", len(self.width_mults)), ("expand", len(self.expand_mults)),
                  ("start", len(self.mutation_starts)), ("stop", len(self.mutation_stops))]
        return genes

    def sizes(self) -> list[int]:
        return [n for _, n in self.layout()]

    def validate(self, genes) -> None:
        sizes = self.sizes()
        if len(genes) != len(sizes) or any(not 0 <= g < n for g, n in zip(genes, sizes)):
            raise InvalidCandidate(f"genes {tuple(genes)} do not index the space {sizes}")

    def largest(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.sizes())

    def random_genes(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(rng.integers(n)) for n in self.sizes())

    def enumerate(self):
        return (tuple(int(v) for v in idx) for idx in np.ndindex(*self.sizes()))

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        d = dict(d)
        d["stages"] = [StageSpec(**s) for s in d["stages"]]
        for key in ("block_types", "width_mults", "expand_mults", "mutation_starts", "mutation_stops"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SubNet:
    """SuperNet layers kept for training; ``depth_aug`` ones are never exported."""

    layers: list[int]
    depth_aug: list[int]

    @property
    def target(self) -> list[int]:
        return [i for i in self.layers if i not in self.depth_aug]


def stage_of(space: SearchSpace) -> list[int]:
    return [i for i, s in enumerate(space.stages) for _ in range(s.max_depth)]


def cut_subnet(space: SearchSpace, mask) -> SubNet:
    """Keep the masked layers; unmasked layers next to a kept one in the same stage become depth augmentation."""
    mask = [bool(m) for m in mask]
    if len(mask) != space.n_layers:
        raise InvalidCandidate(f"mask has {len(mask)} entries, SuperNet has {space.n_layers} layers")
    stage = stage_of(space)
    first = {s: stage.index(s) for s in set(stage)}
    for s, j in first.items():
        if not mask[j]:
            raise InvalidCandidate(f"stage {s} has no selected first layer")
    aug = [j for j, m in enumerate(mask) if not m and any(
        0 <= k < len(mask) and mask[k] and stage[k] == stage[j] for k in (j - 1, j + 1))]
    return SubNet(sorted([j for j, m in enumerate(mask) if m] + aug), aug)


@dataclass
class Candidate:
    genes: tuple[int, ...]
    fitness: float | None = None
    cost: CostReport | None = None
    tag: str = ""  # "", "infeasible" or "diverged"
    trained: bool = False
    seed: int = 0

    @property
    def feasible(self) -> bool:
        return self.tag != "infeasible"

    def rank_key(self):
        return (self.feasible, self.fitness if self.fitness is not None else -math.inf)


@dataclass
class Decoded:
    subnet: SubNet
    types: list[str]
    width: float
    expand: float
    start: float
    stop: float


def decode(space: SearchSpace, genes) -> Decoded:
    space.validate(genes)
    g = dict(zip([n for n, _ in space.layout()], genes))
    mask, sub_mask = [], []
    for i, s in enumerate(space.stages):
        target = g[f"stage{i}.target"] + 1
        sub = max(target, g[f"stage{i}.sub"] + 1)
        mask += [j < target for j in range(s.max_depth)]
        sub_mask += [j < sub for j in range(s.max_depth)]
    subnet = cut_subnet(space, mask)
    # depth augmentation only where the SubNet gene asks for it
    subnet = SubNet([j for j in subnet.layers if sub_mask[j]], [j for j in subnet.depth_aug if sub_mask[j]])
    types = [space.block_types[g[f"layer{j}.type"]] for j in range(space.n_layers)]
    return Decoded(subnet, types, space.width_mults[g["width"]], space.expand_mults[g["expand"]],
                   space.mutation_starts[g["start"]], space.mutation_stops[g["stop"]])


def candidate_arch(space: SearchSpace, genes) -> ArchSpec:
    d = decode(space, genes)
    stage = stage_of(space)
    blocks = []
    for j in d.subnet.layers:
        s = space.stages[stage[j]]
        first = j == stage.index(stage[j])
        blocks.append(BlockSpec(s.cout, s.expand, s.stride if first else 1, family=d.types[j],
                                depth_aug=j in d.subnet.depth_aug))
    return ArchSpec(stem=space.stem, blocks=blocks, num_classes=space.num_classes,
                    family=space.stem_family, width_aug=d.width, expand_aug=d.expand,
                    resolution=space.resolution)


def candidate_cost(space: SearchSpace, genes) -> CostReport:
    return cost_report(graph_descriptor(AugModel(candidate_arch(space, genes))))


@dataclass
class HardwareLimits:
    energy_mj: float | None = None
    latency_ms: float | None = None
    params_m: float | None = None

    def violations(self, cost: CostReport) -> dict[str, float]:
        """Ratio value/limit for every exceeded limit."""
        out = {}
        for name, value in (("energy_mj", cost.energy_mj), ("latency_ms", cost.latency_ms),
                            ("params_m", cost.params_m)):
            lim = getattr(self, name)
            if lim is not None and value > lim:
                out[name] = value / lim
        return out


@dataclass
class MutationSchedule:
    start_fraction: float
    stop_fraction: float
    flip_steps: list[int]

    def is_mult_free(self, layer: int, step: int) -> bool:
        return step >= self.flip_steps[layer]

    def all_mult_free(self, step: int) -> bool:
        return all(step >= s for s in self.flip_steps)


def mutation_schedule(n_layers: int, start: float, stop: float, total_steps: int) -> MutationSchedule:
    """Flip steps evenly spaced in ``[start, stop] * total_steps``, shallow layers first."""
    return MutationSchedule(start, stop, flip_schedule(n_layers, start, stop, total_steps))


def candidate_schedule(space: SearchSpace, genes, total_steps: int) -> MutationSchedule:
    """Schedule over the flip units of the candidate's model (stem, target blocks, head)."""
    d = decode(space, genes)
    n_units = len(AugModel(candidate_arch(space, genes)).mutation_units())
    return mutation_schedule(n_units, d.start, d.stop, total_steps)


def candidate_seed(seed: int, genes) -> int:
    return int(np.random.SeedSequence([seed, *genes]).generate_state(1)[0])


def evaluate_candidate(cand: Candidate, space: SearchSpace, limits: HardwareLimits,
                       data=None, budget_epochs: int = 1, seed: int = 0,
                       fitness_fn: Callable[[Candidate], float] | None = None,
                       train_config: TrainConfig | None = None) -> Candidate:
    """Cost first; infeasible candidates score 0 untrained, others train briefly (or use ``fitness_fn``)."""
    cand.seed = candidate_seed(seed, cand.genes)
    cand.cost = candidate_cost(space, cand.genes)
    if limits.violations(cand.cost):
        cand.fitness, cand.tag, cand.trained = 0.0, "infeasible", False
        return cand
    if fitness_fn is not None:
        cand.fitness = float(fitness_fn(cand))
        return cand
    if data is None:
        raise ConfigurationError("training-based fitness needs a dataset")
    (x, y), (xv, yv) = data
    d = decode(space, cand.genes)
    cfg = replace(train_config or TrainConfig(), epochs=budget_epochs, seed=cand.seed,
                  mutation=(d.start, d.stop))
    model = AugModel(candidate_arch(space, cand.genes), seed=cand.seed)
    cand.trained = True
    try:
        train(model, x, y, cfg)
        cand.fitness = evaluate(model, xv, yv)
    except NonFiniteError:
        cand.fitness, cand.tag = 0.0, "diverged"
    return cand


@dataclass
class EvolutionResult:
    ranked: list[Candidate]
    evaluated: list[Candidate] = field(default_factory=list)

    @property
    def best(self) -> Candidate:
        return self.ranked[0]


def _tournament(pop: list[Candidate], k: int, rng) -> Candidate:
    picks = rng.choice(len(pop), size=min(k, len(pop)), replace=False)
    return max((pop[i] for i in picks), key=Candidate.rank_key)


def _mutate(genes, sizes, p: float, rng) -> tuple[int, ...]:
    out = list(genes)
    hit = [i for i in range(len(out)) if sizes[i] > 1 and rng.random() < p]
    if not hit:
        choices = [i for i in range(len(out)) if sizes[i] > 1]
        hit = [int(rng.choice(choices))] if choices else []
    for i in hit:
        other = [v for v in range(sizes[i]) if v != out[i]]
        out[i] = int(rng.choice(other))
    return tuple(out)


def evolve(space: SearchSpace, population_size: int, generations: int, seed: int,
           evaluator: Callable[[Candidate], Candidate], limits: HardwareLimits | None = None,
           tournament: int = 3, mutation_prob: float = 0.1, offspring: int | None = None,
           prescreen: int = 100, max_attempts: int = 1000) -> EvolutionResult:
    """(mu + lambda) evolution from a cost-only prescreen.

    The first population is the largest feasible candidate plus random feasible ones.
    """
    rng = np.random.default_rng(seed)
    limits = limits or HardwareLimits()
    sizes = space.sizes()
    cache: dict[tuple[int, ...], Candidate] = {}
    evaluated: list[Candidate] = []

    def run(genes) -> Candidate:
        if genes not in cache:
            cache[genes] = evaluator(Candidate(genes))
            evaluated.append(cache[genes])
        return cache[genes]

    # cost-only prescreen
    pool = [space.largest()] + [space.random_genes(rng) for _ in range(prescreen - 1)]
    feasible: list[tuple[float, tuple[int, ...]]] = []
    worst: dict[str, float] = {}
    seen = set()
    attempts = 0
    while True:
        for genes in pool:
            if genes in seen:
                continue
            seen.add(genes)
            cost = candidate_cost(space, genes)
            v = limits.violations(cost)
            if v:
                for k, r in v.items():
                    worst[k] = min(worst.get(k, math.inf), r)
            else:
                feasible.append((cost.mults_m + cost.shifts_m + cost.adds_m, genes))
        attempts += len(pool)
        if feasible or attempts >= max_attempts:
            break
        pool = [space.random_genes(rng) for _ in range(min(prescreen, max_attempts - attempts))]
    if not feasible:
        tight = min(worst, key=worst.get) if worst else "none"
        raise SearchExhausted(f"no feasible candidate in {attempts} attempts; tightest limit {tight} "
                              f"exceeded by x{worst.get(tight, float('nan')):.3f}")
    top = max(range(len(feasible)), key=lambda i: feasible[i][0])
    rest = [g for i, (_, g) in enumerate(feasible) if i != top]
    picks = rng.permutation(len(rest))[: population_size - 1]
    start = [feasible[top][1]] + [rest[i] for i in sorted(picks)]
    population = [run(g) for g in start]
    lam = offspring or population_size
    for _ in range(generations):
        children = []
        for _ in range(lam):
            a, b = _tournament(population, tournament, rng), _tournament(population, tournament, rng)
            cross = rng.random(len(sizes)) < 0.5
            genes = tuple(ga if c else gb for ga, gb, c in zip(a.genes, b.genes, cross))
            children.append(run(_mutate(genes, sizes, mutation_prob, rng)))
        merged = {c.genes: c for c in population + children}
        population = sorted(merged.values(), key=Candidate.rank_key, reverse=True)[:population_size]
    return EvolutionResult(sorted(population, key=Candidate.rank_key, reverse=True), evaluated)


LEDGER_FIELDS = ["rank", "genes", "energy_mj", "latency_ms", "params_m", "fitness", "tag", "trained", "seed"]


def write_ledger(candidates: list[Candidate], path) -> None:
    ranked = sorted(candidates, key=Candidate.rank_key, reverse=True)
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["# mfaug-search-ledger v1"])
        w.writerow(LEDGER_FIELDS)
        for i, c in enumerate(ranked):
            w.writerow([i, json.dumps(list(c.genes)), f"{c.cost.energy_mj:.9g}", f"{c.cost.latency_ms:.9g}",
                        f"{c.cost.params_m:.9g}", f"{c.fitness:.9g}", c.tag, int(c.trained), c.seed])


def read_ledger(path) -> list[dict]:
    with Path(path).open() as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# mfaug-search-ledger"):
        raise ValueError(f"{path} is not a search ledger")
    return list(csv.DictReader(lines[1:]))
