"""
Which "next location" do we predict?
====================================

The same split of a trajectory gives different labels depending on how the
target is chosen: the first new place, the first place held for K minutes,
or the longest stay among the next K places.  Stricter rules label fewer
queries but point at more meaningful places.
"""

import numpy as np

from mobsal.granularity import GranularityConfig
from mobsal.pipeline import generate_streams, prepare
from mobsal.querysim import ImportantAtK, LongestAtK, select_from_segments
from mobsal.synthgen import WorldConfig

# a hand-made future: current place 0, then 1 for 2 min, 2 for 5 min, 3 for 10 min
labels, stays = [1, 2, 3], [120, 300, 600]
for crit in (ImportantAtK(5), LongestAtK(3)):
    print(f"{crit.name:>13}: {select_from_segments(labels, stays, 0, crit)}")

world_cfg = WorldConfig(n_users=10, sim_days=7, rng_seed=2)
_, geo, _ = generate_streams(world_cfg)
data = prepare(geo, world_cfg.rng_seed, GranularityConfig(m_values=(25, 75)))
print(f"\n{len(data.trajectories)} trajectories -> {len(data.queries)} queries")

print("\ncriterion        M   labelled   test   mean target stay (min)")
for m in data.m_values:
    for crit in data.criteria:
        cell = data.cells[(crit, m)]
        stay = np.mean([lq.target_stay for lq in cell]) / 60 if cell else float("nan")
        print(f"{crit.name:<14} {m:3d}   {data.sizes.counts[(crit, m)]:8d} "
              f"{data.sizes.test_counts[(crit, m)]:6d}   {stay:10.1f}")
