"""
Counting operations and searching under an energy budget
========================================================
"""

from mfaug.cost import cost_report, mobilenet_v2
from mfaug.nas import HardwareLimits, SearchSpace, StageSpec, candidate_cost, evaluate_candidate, evolve

# %%
# MobileNetV2 at width 0.35 and 160 pixels, with every layer multiplicative
# and then with every layer turned into shifts.
for family in ("mult", "shift"):
    print(family)
    print(cost_report(mobilenet_v2(0.35, 160, family=family)).to_text())

# %%
# A toy search space small enough to enumerate: block types, depth and widths
# of one stage. The fitness is negative energy so the optimum is known.
space = SearchSpace([StageSpec(8, 2, 2, expand=2)], block_types=("mult", "shift"),
                    width_mults=(2.2, 3.2), expand_mults=(2.2, 3.2), mutation_starts=(0.1,),
                    mutation_stops=(0.5,), stem=4, num_classes=2, resolution=8)
energies = sorted({candidate_cost(space, g).energy_mj for g in space.enumerate()})
limits = HardwareLimits(energy_mj=energies[-3])


def evaluator(c):
    return evaluate_candidate(c, space, limits, fitness_fn=lambda k: -k.cost.energy_mj)


res = evolve(space, 6, 6, seed=0, evaluator=evaluator, limits=limits)
print(f"{len(res.evaluated)} evaluated; best energy {res.best.cost.energy_mj:.3e} mJ, "
      f"brute-force optimum {energies[0]:.3e} mJ")
for c in res.ranked[:3]:
    print(c.genes, f"{c.fitness:.3e}", c.tag)
