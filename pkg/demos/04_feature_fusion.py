"""
Adding phone usage
==================

Forest heads over the LSTM logits plus one behavioural feature group at a
time.  In the synthetic world the app used while dwelling often hints at
where the user goes next, so the app group should help the most.
"""

from mobsal.features import FeatureDims
from mobsal.forest import ForestConfig
from mobsal.granularity import GranularityConfig
from mobsal.neuralseq import TrainConfig
from mobsal.pipeline import ModelConfig, generate_streams, prepare, run_cell
from mobsal.querysim import Successive
from mobsal.synthgen import WorldConfig

world_cfg = WorldConfig(n_users=12, sim_days=10, feature_signal_strength=0.9, rng_seed=4)
_, geo, events = generate_streams(world_cfg)
data = prepare(geo, world_cfg.rng_seed, GranularityConfig(m_values=(25,)), events=events,
               dims=FeatureDims.from_world(world_cfg))
models = ModelConfig(train=TrainConfig(max_epochs=20), forest=ForestConfig(n_trees=60))

groups = (("app",), ("sensor",), ("broadcast",), ("time",), ("app", "sensor", "broadcast", "time"))
results, _ = run_cell(data, Successive(), 25, models=("lstm",), single_groups=("app", "time"),
                      group_sets=groups, cfg=models)

print("model                 groups                       Accuracy@1   vs LSTM")
for r in results:
    rel = "" if r.relative_perf is None else f"{r.relative_perf:.2f}"
    print(f"{r.model_name:<21} {r.groups_key or '-':<28} {r.accuracy_at_1:10.3f}   {rel}")
