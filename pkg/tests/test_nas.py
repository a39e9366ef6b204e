import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfaug.augment import TrainConfig
from mfaug.data import synthetic_dataset
from mfaug.nas import (
    Candidate,
    HardwareLimits,
    InvalidCandidate,
    SearchExhausted,
    SearchSpace,
    StageSpec,
    candidate_arch,
    candidate_cost,
    candidate_schedule,
    cut_subnet,
    decode,
    evaluate_candidate,
    evolve,
    mutation_schedule,
    read_ledger,
    write_ledger,
)
from mfaug.tensor import ConfigurationError


def toy_space() -> SearchSpace:
    # 2 * 2 * 2 * 2 * 2 * 2 = 64 candidates
    return SearchSpace([StageSpec(8, 2, 2, expand=2)], block_types=("mult", "shift"),
                       width_mults=(2.2, 3.2), expand_mults=(2.2, 3.2), mutation_starts=(0.1,),
                       mutation_stops=(0.5,), stem=4, num_classes=2, resolution=8)


def test_cut_subnet_examples():
    space = SearchSpace([StageSpec(8, 1, 4)])
    full = cut_subnet(space, [1, 1, 1, 1])
    assert full.layers == [0, 1, 2, 3] and full.depth_aug == []
    sub = cut_subnet(space, [1, 1, 0, 1])
    assert sub.target == [0, 1, 3] and sub.depth_aug == [2]
    with pytest.raises(InvalidCandidate):
        cut_subnet(space, [0, 1, 1, 1])


def test_invalid_genes_rejected():
    space = toy_space()
    with pytest.raises(InvalidCandidate):
        decode(space, (5,) * len(space.sizes()))


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_target_within_subnet(data):
    space = SearchSpace([StageSpec(8, 2, 3), StageSpec(12, 2, 2)])
    genes = tuple(data.draw(st.integers(0, n - 1)) for n in space.sizes())
    d = decode(space, genes)
    assert set(d.subnet.target) <= set(d.subnet.layers)
    arch = candidate_arch(space, genes)
    assert sum(not b.depth_aug for b in arch.blocks) == len(d.subnet.target)


def test_mutation_schedule_examples():
    s = mutation_schedule(3, 0.1, 0.7, 100)
    assert s.flip_steps == [10, 40, 70]
    assert mutation_schedule(1, 0.05, 0.5, 100).flip_steps == [5]
    assert s.all_mult_free(100) and not s.all_mult_free(69)
    with pytest.raises(ConfigurationError):
        mutation_schedule(3, 0.7, 0.7, 100)


def test_candidate_schedule_is_shallow_to_deep():
    space = toy_space()
    s = candidate_schedule(space, space.largest(), 200)
    assert s.flip_steps == sorted(s.flip_steps)
    assert s.flip_steps[0] == 20 and s.flip_steps[-1] == 100


def test_infeasible_candidate_scores_zero_without_training():
    space = toy_space()
    limit = HardwareLimits(energy_mj=1e-12)
    c = evaluate_candidate(Candidate(space.largest()), space, limit, data=None)
    assert c.fitness == 0.0 and c.tag == "infeasible" and not c.trained


def _separable_data():
    ds = synthetic_dataset(240, 2, 8, seed=3, noise=0.05, jitter=0.05)
    tr, va = ds.split(180)
    return tr.arrays(), va.arrays()


def test_small_candidate_learns_separable_task_and_is_deterministic():
    space = SearchSpace([StageSpec(8, 1, 1, expand=2)], block_types=("mult",), width_mults=(2.2,),
                        expand_mults=(2.2,), stem=8, num_classes=2, resolution=8)
    data = _separable_data()
    genes = space.largest()
    cfg = TrainConfig(batch_size=16, lr=0.1)
    a = evaluate_candidate(Candidate(genes), space, HardwareLimits(), data, 6, seed=1, train_config=cfg)
    b = evaluate_candidate(Candidate(genes), space, HardwareLimits(), data, 6, seed=1, train_config=cfg)
    assert a.trained and a.fitness > 0.9
    assert a.fitness == b.fitness


def _neg_energy_evaluator(space, limits):
    def run(c):
        return evaluate_candidate(c, space, limits, fitness_fn=lambda k: -k.cost.energy_mj)
    return run


def test_evolve_finds_brute_force_optimum():
    space = toy_space()
    all_costs = sorted(candidate_cost(space, g).energy_mj for g in space.enumerate())
    limits = HardwareLimits(energy_mj=sorted(set(all_costs))[-3])
    best = -min(e for e in all_costs if e <= limits.energy_mj)
    hits = 0
    for seed in range(10):
        res = evolve(space, 6, 6, seed, _neg_energy_evaluator(space, limits), limits)
        hits += res.best.fitness == best
        assert all(c.feasible or (c.fitness == 0 and not c.trained) for c in res.evaluated)
    assert hits >= 9


def test_evolve_beats_random_search_on_average():
    space = toy_space()
    ev = _neg_energy_evaluator(space, HardwareLimits())
    evo, rnd = [], []
    for seed in range(10):
        res = evolve(space, 4, 4, seed, ev, prescreen=8)
        evo.append(res.best.fitness)
        rng = np.random.default_rng(seed + 100)
        rnd.append(max(ev(Candidate(space.random_genes(rng))).fitness for _ in range(len(res.evaluated))))
    assert np.mean(evo) >= np.mean(rnd)


def test_evolve_degenerate_and_exhausted():
    space = toy_space()
    ev = _neg_energy_evaluator(space, HardwareLimits())
    res = evolve(space, 1, 0, 0, ev)
    assert [c.genes for c in res.ranked] == [space.largest()]
    tight = HardwareLimits(energy_mj=1e-15)
    with pytest.raises(SearchExhausted, match="energy_mj"):
        evolve(space, 4, 2, 0, _neg_energy_evaluator(space, tight), tight, max_attempts=50)


def test_evolve_is_reproducible():
    space = toy_space()
    ev = _neg_energy_evaluator(space, HardwareLimits())
    a = evolve(space, 4, 3, 5, ev)
    b = evolve(space, 4, 3, 5, ev)
    assert [c.genes for c in a.evaluated] == [c.genes for c in b.evaluated]


def test_ledger_round_trip(tmp_path):
    space = toy_space()
    res = evolve(space, 3, 1, 0, _neg_energy_evaluator(space, HardwareLimits()))
    write_ledger(res.evaluated, tmp_path / "l.csv")
    rows = read_ledger(tmp_path / "l.csv")
    assert len(rows) == len(res.evaluated)
    assert float(rows[0]["fitness"]) == pytest.approx(max(c.fitness for c in res.evaluated))
