"""Command line front end: one subcommand per pipeline stage.

Intermediate results live in ``--stage-dir`` (one sub-directory per stage,
each with a ``manifest.json`` recording the config hash and seed). Published
files (CdR traces, tables, geometry) go to ``--out``. A stage whose manifest
matches the current config hash and seed is skipped unless ``--force`` is
given.

Exit codes: 0 ok, 1 user error (bad config, missing upstream stage, bad
input file), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import pickle
import sys
import traceback

import numpy as np

from . import pipeline
from .combiner import TrafficModels
from .core import ConfigError, load_config, operator_codes, seeded_rng, write_cdr_csv
from .evaluation.mobility_metrics import mobility_metrics, write_table_csv
from .evaluation.scoring import comparison_table, write_table
from .evaluation.usecases import (PowerModelConfig, bs_sleeping, density_map,
                                  office_overlap_share)
from .mobility.citymap import write_map_csv, write_neighborhoods_csv
from .mobility.simulator import write_evenings_csv
from .refdata import extract_stats, ingest_ref, write_ref_csv
from .seqmodel.lstm import SeqModelParams
from .seqmodel.training import build_dataset
from .topology import map_positions, read_stations_csv, write_cells_csv

log = logging.getLogger("cdrsynth")

# stage name -> subcommand producing it
PRODUCER = {
    "ref": "bootstrap-ref or ingest",
    "mobility": "simulate-mobility",
    "topology": "build-topology",
    "cells": "map-cells",
    "social": "build-social",
    "models": "train",
    "cdrs": "generate",
}


class UserError(Exception):
    """Problems the user can fix (reported with exit code 1)."""


class Stages:
    def __init__(self, cfg, seed, stage_dir, out_dir, force=False):
        self.cfg = cfg
        self.seed = seed
        self.root = stage_dir
        self.out = out_dir
        self.force = force
        self.key = {"config_hash": cfg.hash(), "seed": seed}
        os.makedirs(out_dir, exist_ok=True)

    def path(self, stage, name):
        return os.path.join(self.root, stage, name)

    def out_path(self, name):
        return os.path.join(self.out, name)

    def manifest(self, stage):
        p = self.path(stage, "manifest.json")
        if not os.path.exists(p):
            return None
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    def fresh(self, stage):
        """True when the stage already ran with this config and seed."""
        m = self.manifest(stage)
        if self.force or m is None:
            return False
        if {k: m.get(k) for k in self.key} != self.key:
            return False
        return all(os.path.exists(f) for f in m.get("files", []))

    def require(self, stage):
        m = self.manifest(stage)
        if m is None:
            raise UserError(f"missing stage '{stage}' in {self.root}; run "
                            f"`{PRODUCER[stage]}` first")
        if {k: m.get(k) for k in self.key} != self.key:
            log.warning("stage '%s' was produced with a different config or seed; "
                        "rerun `%s` to refresh it", stage, PRODUCER[stage])
        return m

    def load(self, stage, name="data.pkl"):
        self.require(stage)
        with open(self.path(stage, name), "rb") as fh:
            return pickle.load(fh)

    def save(self, stage, obj=None, files=(), extra=None, name="data.pkl"):
        os.makedirs(os.path.join(self.root, stage), exist_ok=True)
        files = list(files)
        if obj is not None:
            p = self.path(stage, name)
            with open(p, "wb") as fh:
                pickle.dump(obj, fh, protocol=4)
            files.append(p)
        m = dict(self.key, stage=stage, files=files, config=self.cfg.as_dict())
        if extra:
            m.update(extra)
        with open(self.path(stage, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(m, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# subcommands

def _save_ref(st, per_user, source):
    ref_csv = st.path("ref", "ref.csv")
    os.makedirs(os.path.dirname(ref_csv), exist_ok=True)
    write_ref_csv(ref_csv, per_user)
    stats = extract_stats(per_user)
    stats.save(st.out_path("ref_stats.json"))
    st.save("ref", (per_user, stats), files=[ref_csv], extra={"source": source})
    print(f"reference: {len(per_user)} users")


def cmd_bootstrap_ref(st, args):
    per_user, _ = pipeline.reference(st.cfg, st.seed)
    _save_ref(st, per_user, "bootstrap")


def cmd_ingest(st, args):
    try:
        per_user = ingest_ref(args.ref, args.min_events)
    except (OSError, ValueError) as e:
        raise UserError(str(e)) from None
    if not per_user:
        raise UserError(f"{args.ref}: no user has at least {args.min_events} events")
    _save_ref(st, per_user, os.path.abspath(args.ref))


def cmd_simulate_mobility(st, args):
    run = pipeline.mobility(st.cfg, st.seed)
    proj = st.cfg.projection
    files = [st.out_path(n) for n in ("map.csv", "neighborhoods.csv", "evenings.csv")]
    write_map_csv(files[0], run.city, proj)
    write_neighborhoods_csv(files[1], run.city, proj)
    write_evenings_csv(files[2], run.evenings)
    if not args.no_trajectories:
        files.append(st.out_path("mobility.csv"))
        run.trajectories.write_csv(files[-1], proj)
    st.save("mobility", run, files)
    print(f"mobility: {run.trajectories.n_users} users, {len(run.trajectories.times)} samples, "
          f"{len(run.evenings)} evening events")


def cmd_build_topology(st, args):
    if args.stations:
        try:
            stations = read_stations_csv(args.stations, st.cfg.projection)
        except (OSError, ValueError) as e:
            raise UserError(str(e)) from None
        topo = pipeline.topology(st.cfg, st.seed, stations=stations)
    else:
        run = st.load("mobility")
        topo = pipeline.topology(st.cfg, st.seed, city=run.city)
    files = [st.out_path("stations.csv"), st.out_path("cells.geojson")]
    topo.write_csv(files[0], st.cfg.projection)
    topo.write_geojson(files[1], st.cfg.projection)
    st.save("topology", topo, files)
    print(f"topology: {len(topo)} cells")


def cmd_map_cells(st, args):
    run = st.load("mobility")
    topo = st.load("topology")
    cells = map_positions(run.trajectories, topo)
    files = []
    if not args.no_csv:
        files.append(st.out_path("cells.csv"))
        write_cells_csv(files[0], run.trajectories, cells)
    st.save("cells", cells, files)
    print(f"cells: {cells.shape[0]} users x {cells.shape[1]} samples")


def cmd_build_social(st, args):
    run = st.load("mobility")
    _, stats = st.load("ref")
    graph = pipeline.social(st.cfg, st.seed, run, stats)
    files = [st.out_path("phonebooks.csv"), st.out_path("identities.csv")]
    graph.write_csv(files[0])
    pipeline.write_identities_csv(files[1], graph.identities)
    st.save("social", graph, files, extra={"dropped_stubs": graph.dropped_stubs})
    print(f"social: {len(graph.phonebooks)} phonebooks, {graph.dropped_stubs} dropped stubs")


def cmd_train(st, args):
    per_user, _ = st.load("ref")
    trained = pipeline.train_models(per_user, st.cfg, st.seed)
    os.makedirs(os.path.join(st.root, "models"), exist_ok=True)
    files = []
    for kind, (res, _) in trained.items():
        p = st.path("models", f"{kind}.npz")
        res.params.save(p)
        m = st.out_path(f"training_{kind}.csv")
        res.write_metrics(m)
        files += [p, m]
        print(f"train {kind}: best epoch {res.best_epoch}")
    st.save("models", files=files)


def _load_models(st):
    st.require("models")
    return {k: SeqModelParams.load(st.path("models", f"{k}.npz")) for k in pipeline.MODEL_KINDS}


def cmd_generate(st, args):
    models = _load_models(st)
    graph = st.load("social")
    cells = st.load("cells")
    run = st.load("mobility")
    _, stats = st.load("ref")
    gen = pipeline.generate(st.cfg, st.seed, TrafficModels(**models), graph, stats, cells,
                            run.trajectories.times)
    files = []
    for (mcc, mnc), recs in zip(operator_codes(st.cfg), gen.by_operator):
        p = st.out_path(f"cdr_{mcc}-{mnc}.csv")
        write_cdr_csv(p, recs)
        files.append(p)
    logp = st.out_path("generation_log.json")
    with open(logp, "w", encoding="utf-8") as fh:
        json.dump(dict(sorted(gen.counters.items()), records=len(gen.records)), fh, indent=1)
    st.save("cdrs", gen.records, files + [logp])
    print(f"generate: {len(gen.records)} records, per operator "
          f"{[len(r) for r in gen.by_operator]}")


def cmd_evaluate(st, args):
    models = _load_models(st)
    per_user, _ = st.load("ref")
    for kind in pipeline.MODEL_KINDS:
        tr, _, te = pipeline.reference_splits(per_user, st.cfg, st.seed, kind)
        rows = comparison_table(kind, models[kind], build_dataset(te, kind, st.cfg.start_weekday),
                                build_dataset(tr, kind, st.cfg.start_weekday),
                                extract_stats(tr), seeded_rng(st.seed, f"eval-{kind}"))
        write_table(st.out_path(f"evaluation_{kind}.csv"), rows)
        for r in rows:
            print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in r.items()))


def cmd_analyze(st, args):
    run = st.load("mobility")
    cells = st.load("cells")
    topo = st.load("topology")
    records = st.load("cdrs")
    mdir = st.out_path("metrics")
    os.makedirs(mdir, exist_ok=True)
    for name, table in mobility_metrics(run.trajectories, cells, st.cfg.contact_radius).items():
        write_table_csv(os.path.join(mdir, f"{name}.csv"), table)
    load = density_map(records, topo, (8, 12))
    write_table_csv(os.path.join(mdir, "density_8_12.csv"),
                    {"cell_id": topo.cell_ids, "load": load})
    share = office_overlap_share(load, topo, run.city)
    pm = PowerModelConfig.from_config(st.cfg)
    res = bs_sleeping(records, topo, pm, st.cfg.duration_s)
    write_table_csv(os.path.join(mdir, "bs_sleeping.csv"), {
        "hour": np.arange(len(res)),
        "asleep": [int(r.asleep.sum()) for r in res],
        "power_strategy_w": [r.power_strategy for r in res],
        "power_always_on_w": [r.power_always_on for r in res]})
    saved = sum(r.power_always_on - r.power_strategy for r in res)
    total = sum(r.power_always_on for r in res)
    print(f"analyze: office share of top-decile cells {share:.2f}; "
          f"sleeping saves {100 * saved / total:.1f}% of always-on power")


COMMANDS = {
    "bootstrap-ref": (cmd_bootstrap_ref, "ref", "generate a planted-structure reference trace"),
    "ingest": (cmd_ingest, "ref", "load a reference CdR trace from CSV"),
    "simulate-mobility": (cmd_simulate_mobility, "mobility", "run the mobility simulator"),
    "build-topology": (cmd_build_topology, "topology", "build the Voronoi cell topology"),
    "map-cells": (cmd_map_cells, "cells", "map trajectories to cell ids"),
    "build-social": (cmd_build_social, "social", "build identities and phonebooks"),
    "train": (cmd_train, "models", "train the three traffic models"),
    "generate": (cmd_generate, "cdrs", "generate per-operator CdR traces"),
    "evaluate": (cmd_evaluate, None, "compare the models with the baselines"),
    "analyze": (cmd_analyze, None, "mobility metrics, density maps, BS sleeping"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="directory for published outputs")
    common.add_argument("--stage-dir", default="stages", help="directory for stage caches")
    common.add_argument("--force", action="store_true", help="rerun even if up to date")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="cdrsynth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, _, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_)
        if name == "ingest":
            sp.add_argument("ref", help="reference CSV (timestamp,user_id,event_type,...)")
            sp.add_argument("--min-events", type=int, default=3,
                            help="drop users with fewer events")
        elif name == "build-topology":
            sp.add_argument("--stations", help="cell_id,lat,lon CSV (default: synthetic)")
        elif name == "simulate-mobility":
            sp.add_argument("--no-trajectories", action="store_true",
                            help="skip the (large) trajectory CSV")
        elif name == "map-cells":
            sp.add_argument("--no-csv", action="store_true", help="skip the cell CSV")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        fn, stage, _ = COMMANDS[args.command]
        st = Stages(cfg, cfg.seed, args.stage_dir, args.out, args.force)
        if stage is not None and st.fresh(stage):
            print(f"{args.command}: up to date (config {st.key['config_hash'][:12]}, "
                  f"seed {st.seed})")
            return 0
        fn(st, args)
        return 0
    except (UserError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
