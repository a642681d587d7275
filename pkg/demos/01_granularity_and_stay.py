"""
How coarse should a "location" be?
===================================

Cluster every GPS fix of a small synthetic population into M places and
watch the average stay shrink as M grows: finer places are left sooner.
"""

import numpy as np

from mobsal.core import ExtractionConfig
from mobsal.granularity import GranularityConfig, assign_all_granularities, mean_stay_seconds
from mobsal.pipeline import build_trajectories, generate_streams, stage_rng, STREAM_KMEANS
from mobsal.synthgen import WorldConfig

world_cfg = WorldConfig(n_users=10, sim_days=7, rng_seed=1)
world, geo, events = generate_streams(world_cfg)
print(f"{world_cfg.n_users} users, {len(geo)} geo records after device-off gaps, {len(events)} usage events")

# ground truth from the generator: how long people really dwell
dwell = world.dwell_seconds()
print(f"true dwell: median {np.median(dwell) / 60:.1f} min, mean {dwell.mean() / 60:.1f} min")

# K-Means at every granularity at once (weighted unique points, k-means++ restarts)
gran = GranularityConfig(m_values=(5, 10, 25, 50, 75, 100))
gm = assign_all_granularities(geo.points(), gran, stage_rng(world_cfg.rng_seed, STREAM_KMEANS))

# cut each user's stream into trajectories at gaps longer than five minutes
trajs = build_trajectories(geo, gm, ExtractionConfig())
print(f"{len(trajs)} trajectories of at least one hour")

print("\n   M   mean stay (min)")
for m in gran.m_values:
    print(f"{m:4d}   {mean_stay_seconds(trajs, m) / 60:8.1f}")
