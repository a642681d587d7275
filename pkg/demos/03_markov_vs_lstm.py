"""
Location history alone
======================

A first-order Markov chain (never predicting "stay put") against an LSTM
over the deduplicated history, with the uniform guess over the other M - 1
places as the floor.
"""

from mobsal.granularity import GranularityConfig
from mobsal.neuralseq import TrainConfig
from mobsal.pipeline import ModelConfig, generate_streams, prepare, run_cell
from mobsal.querysim import ImportantAtK, Successive
from mobsal.synthgen import WorldConfig

world_cfg = WorldConfig(n_users=8, sim_days=7, rng_seed=3)
_, geo, _ = generate_streams(world_cfg)
data = prepare(geo, world_cfg.rng_seed, GranularityConfig(m_values=(10, 25, 50)))
models = ModelConfig(train=TrainConfig(max_epochs=10))

print("criterion      M   n_test   random   markov    lstm")
for crit in (Successive(), ImportantAtK(5)):
    for m in data.m_values:
        results, _ = run_cell(data, crit, m, cfg=models)
        acc = {r.model_name: r.accuracy_at_1 for r in results}
        print(f"{crit.name:<13} {m:3d}   {results[0].n_test:6d}   {acc['random']:.3f}    "
              f"{acc['markov']:.3f}    {acc['lstm']:.3f}")
