"""Check the simulated population against three regularities of human movement.

Daily return peaks, radius of gyration ordered by exploration profile, and a
heavy-tailed inter-contact time distribution. One simulated week of 500 people.
"""
import numpy as np

from cdrsynth import pipeline
from cdrsynth.core import WEEK, PipelineConfig
from cdrsynth.evaluation.mobility_metrics import (ccdf, contact_events, peak_near,
                                                  radius_of_gyration, return_probability)
from cdrsynth.mobility.profiles import EXPLORATION
from cdrsynth.topology import map_positions

SEED = 3
cfg = PipelineConfig(n_users=500, duration_s=WEEK, world_width=7000.0, world_height=8500.0)
run = pipeline.mobility(cfg, SEED)
traj = run.trajectories
cells = map_positions(traj, pipeline.topology(cfg, SEED, run.city))

lags, prob = return_probability(cells, traj.times)
for days in (1, 2, 3):
    print(f"return probability has a local maximum near {24 * days} h:",
          peak_near(lags, prob, days * 86400))

rg = radius_of_gyration(traj.xy)
for e in EXPLORATION:
    sel = np.array([a.profile.exploration == e for a in run.agents])
    print(f"median radius of gyration, {e:<9} {np.median(rg[sel]):7.0f} m  ({sel.sum()} users)")

_, gaps = contact_events(traj.xy, traj.times, cfg.contact_radius)
x, c = ccdf(gaps)
for q in (0.5, 0.1, 0.01):
    print(f"P(inter-contact > t) = {q:<4} at t = {x[np.argmax(c <= q)] / 3600:7.1f} h")
