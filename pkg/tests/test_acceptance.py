"""One test per acceptance criterion; the summary section prints PASS/FAIL per criterion.

Criteria 5 and 6 share one training experiment (about 20 minutes on one core).
Set MFAUG_SKIP_SLOW=1 to skip it.
"""
import os
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from mfaug.augment import AugModel, ArchSpec, BlockSpec, HWSContext, TrainConfig, export_target, from_bytes, to_bytes, train
from mfaug.cli import cmd_train
from mfaug.config import DataConfig, RunConfig
from mfaug.cost import count_ops, energy, mobilenet_v2
from mfaug.data import synthetic_dataset
from mfaug.hws import LaplacePrior, RemapNet, distribution_map, fit_gaussian, ppf_laplace, remap
from mfaug.mfops import (
    add_conv,
    encode,
    eval_error_bound,
    quantize_activation,
    quantize_pow2,
    shift_conv_eval,
    shift_conv_train,
    shift_linear,
)
from mfaug.nas import (
    Candidate,
    HardwareLimits,
    SearchSpace,
    StageSpec,
    candidate_cost,
    candidate_schedule,
    evaluate_candidate,
    evolve,
    mutation_schedule,
)
from mfaug.presets import build_remap_bank, compare_methods, desk_arch, method_arch, get_method
from mfaug.tensor import Tensor, check_gradients, finite_difference_gradient, relative_error
from mfaug.tensor import functional as F


def test_criterion_1_shift_eval_matches_train(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_ratio, exact = 0.0, 0
    for _ in range(100):
        c = int(rng.integers(1, 9))
        groups = c if rng.random() < 0.3 else 1
        co = c if groups > 1 else int(rng.integers(1, 9))
        hw, k = int(rng.integers(3, 17)), int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(1, c, hw, hw))
        w = rng.normal(scale=0.3, size=(co, c // groups, k, k))
        qw = quantize_pow2(w)
        ev = shift_conv_eval(x, qw, stride, k // 2, groups).data
        tr = shift_conv_train(Tensor(x), Tensor(w), stride, k // 2, groups).data
        bound = eval_error_bound(qw, quantize_activation(x).scale)[None, :, None, None]
        worst_ratio = max(worst_ratio, float(np.max(np.abs(ev - tr) / np.maximum(bound, 1e-30))))

        # integer inputs divisible by every right shift in use are computed exactly
        wi = rng.choice([-1, 1], size=w.shape) * 2.0 ** rng.integers(-4, 1, size=w.shape)
        qi = quantize_pow2(wi)
        xi = rng.integers(-2000, 2000, size=x.shape).astype(np.float64) * 16
        ev_i = shift_conv_eval(xi, qi, stride, k // 2, groups, act=quantize_activation(xi, scale=1.0)).data
        ref = F.conv2d(Tensor(xi), Tensor(wi), stride, k // 2, groups).data
        exact += bool(np.array_equal(ev_i, ref))
    dt = time.perf_counter() - t0
    criterion(1, worst_ratio <= 1.0 and exact == 100 and dt < 10,
              f"max |eval-train|/bound={worst_ratio:.3f}, exact {exact}/100, {dt:.1f}s")


def test_criterion_2_gradients(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    errs: dict[str, float] = {}

    def note(name, e):
        errs[name] = max(errs.get(name, 0.0), float(e))

    for _ in range(20):
        c, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hw, k, s = int(rng.integers(3, 6)), int(rng.choice([1, 3])), int(rng.integers(1, 3))
        x = rng.normal(size=(2, c, hw, hw))
        w = rng.normal(size=(co, c, k, k))
        note("conv2d", max(check_gradients(lambda a, b: F.conv2d(a, b, s, k // 2), [x, w])))
        dw = rng.normal(size=(c, 1, k, k))
        note("conv2d", max(check_gradients(lambda a, b: F.conv2d(a, b, s, k // 2, c), [x, dw])))

        d, o = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        xl, wl, bl = rng.normal(size=(3, d)), rng.normal(size=(o, d)), rng.normal(size=o)
        note("linear", max(check_gradients(F.linear, [xl, wl, bl])))

        # keep |x - f| away from the kink so central differences are valid
        xa = np.round(x, 1)
        fa = np.round(w, 1) + 0.05
        probe = rng.normal(size=(2, co, (hw + 2 * (k // 2) - k) // s + 1, (hw + 2 * (k // 2) - k) // s + 1))
        ft = Tensor(fa, requires_grad=True)
        (add_conv(Tensor(xa), ft, s, k // 2) * Tensor(probe)).sum().backward()
        num = finite_difference_gradient(
            lambda v: float((add_conv(Tensor(xa), Tensor(v), s, k // 2).data * probe).sum()), fa)
        note("add_conv filter", relative_error(ft.grad, num))

        # STE: the weight gradient is the gradient of the conv evaluated at the quantized weights
        ws = rng.uniform(0.05, 0.9, size=w.shape) * rng.choice([-1, 1], size=w.shape)
        wq = quantize_pow2(ws).dequantize(np.float64)
        wt = Tensor(ws, requires_grad=True)
        (shift_conv_train(Tensor(x), wt, s, k // 2) * Tensor(probe)).sum().backward()
        num = finite_difference_gradient(lambda v: float((F.conv2d(Tensor(x), Tensor(v), s, k // 2).data * probe).sum()), wq)
        note("shift conv STE", relative_error(wt.grad, num))
        note("shift conv input", check_gradients(lambda a: shift_conv_train(a, Tensor(ws), s, k // 2), [x])[0])
        wls = rng.uniform(0.05, 0.9, size=(o, d)) * rng.choice([-1, 1], size=(o, d))
        note("shift linear input", check_gradients(lambda a: shift_linear(a, Tensor(wls)), [xl])[0])
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    criterion(2, worst < 1e-3 and dt < 30,
              "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()) + f" ({dt:.1f}s)")


def test_criterion_3_hws_distribution(criterion):
    w = np.random.default_rng(3).normal(size=(10_000, 1))
    net = RemapNet.identity(1).freeze()
    out = remap(Tensor(w), net, fit_gaussian(w), LaplacePrior(0, 1), mode="direct").data.reshape(-1)
    ks = stats.kstest(out, stats.laplace(0, 1).cdf).statistic
    q = ppf_laplace(0.75, LaplacePrior(0, 1))
    xs = np.sort(np.random.default_rng(4).normal(scale=3, size=5000))
    r = distribution_map(xs, fit_gaussian(xs), LaplacePrior(0.1, 0.5))
    mono = bool(np.all(np.diff(r) >= 0))
    criterion(3, ks < 0.02 and abs(q - np.log(2)) <= 1e-9 and mono,
              f"KS={ks:.4f}, |ppf(0.75)-ln2|={abs(q - np.log(2)):.1e}, monotone={mono}")


@pytest.mark.parametrize("seed", range(3))
def test_criterion_4_export_consistency(criterion, seed):
    rng = np.random.default_rng(seed)
    arch = ArchSpec(stem=4, blocks=[BlockSpec(6, 2, 2), BlockSpec(6, 2, 1, depth_aug=seed == 1), BlockSpec(8, 2, 2)],
                    num_classes=3, resolution=16, width_aug=2.0, expand_aug=1.5,
                    family="add" if seed == 2 else "shift")
    ds = synthetic_dataset(96, 3, 16, seed=seed)
    x, y = ds.arrays()
    cfg = TrainConfig(epochs=2, batch_size=32, mutation=(0.1, 0.6), seed=seed)
    bank = build_remap_bank(arch, x, y, TrainConfig(epochs=1, batch_size=32), family=arch.family, iters=50)
    model = AugModel(arch, seed=seed, hws_ctx=HWSContext(bank))
    train(model, x, y, cfg)
    model.eval()
    exp = export_target(model)
    xt = rng.normal(size=(5, 3, 16, 16)).astype(np.float32)
    exact = bool(np.array_equal(exp.forward(xt).data, model(xt).data))
    blob = to_bytes(exp)
    back = from_bytes(blob)
    codes_same = exp.codes.keys() == back.codes.keys() and all(
        encode(exp.codes[k]).tobytes() == encode(back.codes[k]).tobytes() for k in exp.codes)
    stable = to_bytes(back) == blob
    criterion(4, exact and codes_same and stable and (arch.family != "shift" or len(exp.codes) > 0),
              f"logits exact={exact}, codes byte-identical={codes_same}, re-serialised identical={stable}")


EXPERIMENT = dict(n_train=3000, n_test=3000, noise=0.8, jitter=0.6, epochs=10, lr=0.1, width_aug=2.8, seeds=5)
METHODS = ["Shift", "AugShift", "AugShift-noHWS", "AugShift-noReorder"]


@pytest.fixture(scope="module")
def augmentation_experiment():
    if os.environ.get("MFAUG_SKIP_SLOW"):
        pytest.skip("MFAUG_SKIP_SLOW set")
    e = EXPERIMENT
    t0 = time.perf_counter()
    ds = synthetic_dataset(e["n_train"] + e["n_test"], 10, 32, seed=0, noise=e["noise"], jitter=e["jitter"])
    tr, te = ds.split(e["n_train"])
    cfg = TrainConfig(epochs=e["epochs"], lr=e["lr"], seed=0)
    arch = desk_arch(e["width_aug"])
    bank = build_remap_bank(arch, *tr.arrays(), cfg)
    accs = compare_methods(METHODS, arch, tr.arrays(), te.arrays(), cfg, range(e["seeds"]), bank,
                           log=lambda s: print(s, flush=True))
    params = AugModel(method_arch(get_method("Shift"), arch)).target_parameter_count()
    means = {k: 100 * float(np.mean(v)) for k, v in accs.items()}
    return means, accs, params, time.perf_counter() - t0


def test_criterion_5_augmentation_direction(criterion, augmentation_experiment):
    m, _, params, dt = augmentation_experiment
    gain = m["AugShift"] - m["Shift"]
    ok = gain >= 0.5 and m["AugShift"] >= m["AugShift-noHWS"] and params <= 100_000 and dt < 1800
    criterion(5, ok, f"AugShift {m['AugShift']:.2f} vs Shift {m['Shift']:.2f} (+{gain:.2f}), "
                     f"noHWS {m['AugShift-noHWS']:.2f}; {params} params, {dt / 60:.1f} min")


def test_criterion_6_weight_sharing_ablation(criterion, augmentation_experiment):
    m, _, _, _ = augmentation_experiment
    with_r, without_r, direct = m["AugShift"], m["AugShift-noReorder"], m["Shift"]
    ok = with_r >= without_r - 0.2 and without_r >= direct - 0.2
    criterion(6, ok, f"reorder {with_r:.2f} >= no-reorder {without_r:.2f} >= direct {direct:.2f}")


def test_criterion_7_op_counts_and_energy(criterion):
    mults = count_ops(mobilenet_v2(0.35, 160)).mults_m
    table = {
        ("mult", "FP32"): 3.7, ("mult", "FP16"): 0.9, ("mult", "INT32"): 3.1, ("mult", "INT8"): 0.2,
        ("add", "FP32"): 1.1, ("add", "FP16"): 0.4, ("add", "INT32"): 0.1, ("add", "INT8"): 0.03,
        ("shift", "INT32"): 0.13, ("shift", "INT8"): 0.024,
    }
    exact = all(energy(Counter({k: 10**9})) == pytest.approx(v, rel=1e-12) for k, v in table.items())
    ok = abs(mults - 29.72) / 29.72 <= 0.10 and exact
    criterion(7, ok, f"MobileNetV2-0.35@160 mults {mults:.2f}M ({(mults / 29.72 - 1) * 100:+.1f}%), "
                     f"energy table exact={exact}")


def test_criterion_8_nas_micro_search(criterion):
    space = SearchSpace([StageSpec(8, 2, 2, expand=2)], block_types=("mult", "shift"),
                        width_mults=(2.2, 3.2), expand_mults=(2.2, 3.2), mutation_starts=(0.1,),
                        mutation_stops=(0.5,), stem=4, num_classes=2, resolution=8)
    genes = list(space.enumerate())
    energies = sorted(candidate_cost(space, g).energy_mj for g in genes)
    limits = HardwareLimits(energy_mj=sorted(set(energies))[-3])
    optimum = -min(e for e in energies if e <= limits.energy_mj)

    def evaluator(c):
        return evaluate_candidate(c, space, limits, fitness_fn=lambda k: -k.cost.energy_mj)

    hits, infeasible_ok, n_infeasible = 0, True, 0
    for seed in range(10):
        res = evolve(space, 6, 6, seed, evaluator, limits)
        hits += res.best.fitness == optimum
        for c in res.evaluated:
            if not c.feasible:
                n_infeasible += 1
                infeasible_ok &= c.fitness == 0.0 and not c.trained
    # the fitness function stands in for training; infeasible candidates must never reach it
    reached = set()

    def probe(k):
        reached.add(k.genes)
        return -k.cost.energy_mj

    for g in genes:
        c = evaluate_candidate(Candidate(g), space, limits, fitness_fn=probe)
        if not c.feasible:
            n_infeasible += 1
            infeasible_ok &= c.fitness == 0.0 and not c.trained and g not in reached
    sched = candidate_schedule(space, space.largest(), 1000)
    shallow_first = sched.flip_steps == sorted(sched.flip_steps) and len(set(sched.flip_steps)) == len(sched.flip_steps)
    s3 = mutation_schedule(3, 0.1, 0.7, 100)
    ends_free = sched.all_mult_free(1000) and s3.all_mult_free(100) and not s3.all_mult_free(69)
    ok = len(genes) <= 64 and hits >= 9 and infeasible_ok and shallow_first and ends_free
    criterion(8, ok, f"{len(genes)} candidates, optimum found {hits}/10, {n_infeasible} infeasible all 0/untrained="
                     f"{infeasible_ok}, schedule shallow-to-deep={shallow_first}, ends mult-free={ends_free}")


def test_criterion_9_determinism(criterion, tmp_path):
    arch = {"stem": 4, "blocks": [{"cout": 6, "expand": 2, "stride": 2}, {"cout": 6, "expand": 2}],
            "num_classes": 10, "resolution": 32, "width_aug": 2.0}
    runs = []
    for name in ("a", "b"):
        cfg = RunConfig(method="AugShift", arch=arch, data=DataConfig(synthetic_n=160),
                        train={"epochs": 3, "batch_size": 32, "mutation": [0.1, 0.6]}, bank_epochs=1,
                        output_dir=str(tmp_path / name))
        cmd_train(cfg, log=lambda m: None)
        runs.append((tmp_path / name / "metrics.csv").read_bytes())
    same = runs[0] == runs[1]
    criterion(9, same and runs[0].count(b"\n") == 4, f"metrics.csv bit-identical={same}")
