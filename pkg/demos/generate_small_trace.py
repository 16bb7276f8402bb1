"""Generate a small two-operator CdR trace end to end, entirely in memory.

Run with ``python3 demos/generate_small_trace.py [out_dir]``. It takes well under
a minute: 200 users, one day, and briefly trained traffic models.
"""
import sys
from collections import Counter
from pathlib import Path

from cdrsynth import pipeline
from cdrsynth.combiner import TrafficModels, write_operator_files
from cdrsynth.core import DAY, WEEK, PipelineConfig
from cdrsynth.refdata import extract_stats
from cdrsynth.topology import map_positions

SEED = 7
cfg = PipelineConfig(n_users=200, duration_s=DAY, world_width=3000.0, world_height=3000.0,
                     n_stations=40, boot_n_users=150, boot_duration_s=2 * WEEK, max_epochs=3)
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

# 1. a reference trace with planted habits, and models trained on it
per_user, _ = pipeline.reference(cfg, SEED)
stats = extract_stats(per_user)
models = pipeline.train_models(per_user, cfg, SEED)
for kind, (res, _) in models.items():
    losses = [m["valid_loss"] for m in res.metrics]
    print(f"{kind:>5} model: validation loss {losses[0]:.3f} -> {min(losses):.3f}, "
          f"kept epoch {res.best_epoch}")

# 2. where people are: mobility, cells, social graph
run = pipeline.mobility(cfg, SEED)
topo = pipeline.topology(cfg, SEED, run.city)
cells = map_positions(run.trajectories, topo)
graph = pipeline.social(cfg, SEED, run, stats)

# 3. what they do: per-user event sequences resolved into matched calls
tm = TrafficModels(*(models[k][0].params for k in pipeline.MODEL_KINDS))
gen = pipeline.generate(cfg, SEED, tm, graph, stats, cells, run.trajectories.times)
out.mkdir(parents=True, exist_ok=True)
paths = [out / f"cdr_{op}.csv" for op in cfg.operators]
write_operator_files(gen.by_operator, paths)

kinds = Counter((r.event_type, r.direction) for r in gen.records)
print(f"{len(gen.records)} records over {len(topo.cell_ids)} cells")
for (etype, direction), n in sorted(kinds.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
    print(f"  {etype:<5} {direction or '-':<4} {n}")
for p in paths:
    print("wrote", p)
