"""Two network-planning questions answered from a generated trace.

Where is traffic concentrated during office hours, and how much energy would
switching idle micro cells off save over a day? Untrained (uniform) traffic
models are enough here, so this runs in a few seconds.
"""
import numpy as np

from cdrsynth import pipeline
from cdrsynth.combiner import TrafficModels
from cdrsynth.core import DAY, PipelineConfig
from cdrsynth.evaluation.usecases import (PowerModelConfig, bs_sleeping, density_map,
                                          office_overlap_share)
from cdrsynth.refdata import extract_stats
from cdrsynth.seqmodel.lstm import zero_params
from cdrsynth.topology import map_positions

SEED = 11
cfg = PipelineConfig(n_users=600, duration_s=DAY, world_width=5000.0, world_height=5000.0,
                     boot_n_users=100)
per_user, _ = pipeline.reference(cfg, SEED)
stats = extract_stats(per_user)
run = pipeline.mobility(cfg, SEED)
topo = pipeline.topology(cfg, SEED, run.city)
cells = map_positions(run.trajectories, topo)
graph = pipeline.social(cfg, SEED, run, stats)
models = TrafficModels(zero_params(37, (8,), 4), zero_params(37, (8,), 3),
                       zero_params(36, (8,), 1, "mae"))
gen = pipeline.generate(cfg, SEED, models, graph, stats, cells, run.trajectories.times)

load = density_map(gen.records, topo, (8, 12))
print(f"busiest cell carries {load.max():.1f} events/h between 08 and 12")
print(f"share of the top 10% cells inside office districts: "
      f"{office_overlap_share(load, topo, run.city, 0.1):.0%}")

pm = PowerModelConfig.from_config(cfg)
windows = bs_sleeping(gen.records, topo, pm, cfg.duration_s)
on = np.array([w.power_always_on for w in windows])
sleep = np.array([w.power_strategy for w in windows])
print(f"energy saved by sleeping idle cells: {1 - sleep.sum() / on.sum():.1%}")
print("hour  always-on [W]  strategy [W]")
for h in range(0, len(windows), 3):
    print(f"{h:>4}  {on[h]:13.0f}  {sleep[h]:12.0f}")
