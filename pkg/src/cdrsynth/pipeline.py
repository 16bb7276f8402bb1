"""In-memory pipeline stages shared by the command line and the demos.

Each stage takes the configuration and a master seed and derives its own
random stream, so stages can be rerun independently with identical results.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

from .combiner import (TrafficModels, attach_space_and_metrics, generate_sequences,
                       resolve_calls, split_by_operator)
from .core import WEEK, iter_csv_rows, operator_codes, seeded_rng
from .mobility.simulator import run_mobility
from .refdata import SplitSpec, bootstrap_ref, split
from .seqmodel.training import TrainSpec, build_dataset, train
from .social import (PhoneIdentity, assign_identities, build_graph, mine_relationships,
                     sample_degrees)
from .statmodel import VolumeProfileTable, assign_volume_profiles
from .topology import build_topology, synthetic_stations

log = logging.getLogger(__name__)

MODEL_KINDS = ("event", "iet", "corr")
IDENTITY_HEADER = ["user_id", "phone", "imei", "operator"]


def reference(cfg, seed):
    """Planted-structure reference trace: ``(per_user, truth)``."""
    return bootstrap_ref(cfg, seeded_rng(seed, "bootstrap"))


def reference_splits(per_user, cfg, seed, kind):
    """Train/valid/test split used for one model family.

    Event-type and IET models use ``cfg.traffic_split``; the correspondent
    model uses ``cfg.corr_split``. The trace length is the last timestamp
    rounded up to whole weeks; a chronological split on fewer than four weeks
    falls back to the by-user split with a warning.
    """
    mode = cfg.corr_split if kind == "corr" else cfg.traffic_split
    last = max((int(ev.times[-1]) for ev in per_user.values() if len(ev)), default=0)
    if mode == "chronological" and last < 3 * WEEK:
        # fewer than four (rounded-up) weeks of data
        log.warning("trace shorter than four weeks; %s model uses the by-user split", kind)
        mode = "by_user"
    return split(per_user, SplitSpec(mode), seeded_rng(seed, f"split-{mode}"))


def train_models(per_user, cfg, seed, kinds=MODEL_KINDS):
    """Train the requested model families. Returns ``{kind: (TrainResult,
    (train, valid, test) datasets)}``."""
    out = {}
    for kind in kinds:
        tr, va, te = reference_splits(per_user, cfg, seed, kind)
        ds = tuple(build_dataset(p, kind, cfg.start_weekday) for p in (tr, va, te))
        res = train(kind, ds[0], ds[1], TrainSpec.from_config(cfg, kind),
                    seeded_rng(seed, f"train-{kind}"))
        out[kind] = (res, ds)
    return out


def mobility(cfg, seed):
    return run_mobility(cfg, seeded_rng(seed, "mobility"))


def topology(cfg, seed, city=None, stations=None):
    """Cell topology from explicit stations or a synthetic layout."""
    if stations is None:
        stations = synthetic_stations(cfg, seeded_rng(seed, "stations"), city)
    return build_topology(stations, cfg.world_width, cfg.world_height)


def social(cfg, seed, run, stats):
    """Identities and the reciprocal phonebook graph for the mobility users."""
    n = run.trajectories.n_users
    rel = mine_relationships(run.trajectories, run.city, run.evenings)
    ops = [(mcc, mnc, share) for (mcc, mnc), share in zip(operator_codes(cfg), cfg.user_share)]
    ids = assign_identities(n, ops, seeded_rng(seed, "identities"))
    deg = sample_degrees(stats, n, seeded_rng(seed, "degrees"))
    return build_graph(deg, ids, rel, cfg.selection_probs, seeded_rng(seed, "graph"),
                       foreign_mccs=cfg.foreign_mccs,
                       max_rewire_attempts=cfg.max_rewire_attempts)


@dataclass
class Generated:
    records: list
    by_operator: list
    counters: dict


def generate(cfg, seed, models: TrafficModels, graph, stats, cells, grid_times):
    """Run the combiner end to end and split the trace per operator."""
    streams = generate_sequences(models, graph, cfg.duration_s, seeded_rng(seed, "sequences"),
                                 stats.event_type_marginals, stats.intl_incoming_fraction,
                                 cfg.start_weekday, cfg.iet_n_samples)
    inter, rlog = resolve_calls(streams, graph, seeded_rng(seed, "resolve"), cfg.duration_s,
                                cfg.call_truncation)
    table = VolumeProfileTable.from_config(cfg)
    profiles = assign_volume_profiles(len(graph.phonebooks), table,
                                      seeded_rng(seed, "volume-profiles"))
    records = attach_space_and_metrics(inter, cells, grid_times, graph.identities, table,
                                       profiles, seeded_rng(seed, "volumes"))
    by_op = split_by_operator(records, graph.identities, len(cfg.operators))
    return Generated(records, by_op, dict(rlog.counters))


def write_identities_csv(path, identities):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IDENTITY_HEADER)
        for i in identities:
            w.writerow([i.user_id, i.phone, i.imei, i.operator])


def read_identities_csv(path):
    out = []
    for lineno, row in iter_csv_rows(path, IDENTITY_HEADER):
        try:
            out.append(PhoneIdentity(int(row[0]), row[1], row[2], int(row[3])))
        except (ValueError, IndexError):
            raise ValueError(f"{path}: malformed row at line {lineno}") from None
    return out
