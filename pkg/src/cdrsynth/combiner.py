"""Assemble complete CdR traces from the trained traffic models, the social
graph and the cell-mapped trajectories.

1. :func:`generate_sequences` runs the three models autoregressively for all
   users at once: event type, then IET bin and continuous IET, then (for
   calls and SMS) the friendship rank of the correspondent.
2. :func:`resolve_calls` sweeps all events in time order, maps ranks to
   phonebook entries, enforces callee availability, truncates durations and
   induces the incoming (MT) records.
3. :func:`attach_space_and_metrics` adds cells and data volumes.
4. :func:`split_by_operator` writes one file per operator.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import DAY, N_EVENT_TYPES, CdrRecord, EventType, write_cdr_csv
from .seqmodel.features import encode_sequence
from .seqmodel.lstm import initial_state, lstm_step
from .statmodel import sample_call_duration, sample_data_volume, sample_iet

log = logging.getLogger(__name__)

LOCAL_TYPES = (EventType.LOCAL_CALL, EventType.LOCAL_SMS)


@dataclass
class UserStream:
    user_id: int
    times: np.ndarray
    types: np.ndarray
    ranks: np.ndarray  # predicted friendship rank, 0 for data events
    intl_incoming: np.ndarray

    def __len__(self):
        return len(self.times)


@dataclass
class TrafficModels:
    event: object
    iet: object
    corr: object


def allowed_types(pb):
    """Event types a phonebook lets its owner generate."""
    allowed = np.zeros(N_EVENT_TYPES, dtype=bool)
    allowed[EventType.DATA] = True
    allowed[EventType.LOCAL_CALL] = allowed[EventType.LOCAL_SMS] = bool(pb.out or pb.both)
    allowed[EventType.INTL_CALL] = bool(pb.inter)
    return allowed


def _sample_rows(probs, rng):
    c = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))[:, None] * c[:, -1:]
    return np.minimum((u >= c).sum(axis=1), probs.shape[1] - 1)


def generate_sequences(models: TrafficModels, graph, duration_s, rng, marginals,
                       intl_incoming_fraction=0.0, start_weekday=0, iet_n_samples=1):
    """Autoregressive event streams for every phonebook owner.

    The first event's type is drawn from ``marginals`` restricted to the
    user's allowed types, at a time uniform within the first day. Every
    later step samples the next type from the event model (restricted the
    same way), an IET bin from the IET model, a continuous IET from that bin
    (rounded up to whole seconds, at least 1 s), and for calls and SMS a rank
    from the correspondent model, clamped to ``[1, #c_u]`` and rounded.
    """
    books = graph.phonebooks
    n = len(books)
    allowed = np.array([allowed_types(pb) for pb in books]) if n else np.zeros((0, 4), bool)
    n_corr = np.array([pb.n_correspondents for pb in books], dtype=float)
    times = [[] for _ in range(n)]
    types = [[] for _ in range(n)]
    ranks = [[] for _ in range(n)]
    if duration_s <= 0 or n == 0:
        return _streams(books, times, types, ranks, rng, intl_incoming_fraction)

    m = np.asarray(marginals, dtype=float) * allowed
    m[m.sum(axis=1) == 0, EventType.DATA] = 1.0
    e = _sample_rows(m / m.sum(axis=1, keepdims=True), rng)
    t = np.floor(rng.random(n) * min(DAY, duration_s)).astype(np.int64)
    ev_state = initial_state(models.event, n)
    iet_state = initial_state(models.iet, n)
    corr_state = initial_state(models.corr, n)

    def emit(users, e_new, t_new):
        nonlocal corr_state
        social = np.isin(e_new, [int(x) for x in (EventType.LOCAL_CALL, EventType.INTL_CALL,
                                                  EventType.LOCAL_SMS)])
        r = np.zeros(len(users), dtype=np.int64)
        if social.any():
            su = users[social]
            x = encode_sequence("corr", e_new[social], t_new[social], corr_count=n_corr[su],
                                start_weekday=start_weekday)
            sub = [(h[su], c[su]) for h, c in corr_state]
            out, new = lstm_step(models.corr, x, sub)
            for (h, c), (h2, c2) in zip(corr_state, new):
                h[su], c[su] = h2, c2
            r[social] = np.rint(np.clip(out, 1.0, np.maximum(n_corr[su], 1))).astype(np.int64)
        for k, u in enumerate(users):
            times[u].append(int(t_new[k]))
            types[u].append(int(e_new[k]))
            ranks[u].append(int(r[k]))

    active = np.arange(n)
    emit(active, e, t)
    cur_e, cur_t = e.copy(), t.copy()
    while len(active):
        x = encode_sequence("event", cur_e[active], cur_t[active], start_weekday=start_weekday)
        sub = [(h[active], c[active]) for h, c in ev_state]
        p, new = lstm_step(models.event, x, sub)
        for (h, c), (h2, c2) in zip(ev_state, new):
            h[active], c[active] = h2, c2
        p = p * allowed[active]
        p[p.sum(axis=1) == 0, EventType.DATA] = 1.0
        e_next = _sample_rows(p / p.sum(axis=1, keepdims=True), rng)
        x = encode_sequence("iet", None, cur_t[active], next_types=e_next,
                            start_weekday=start_weekday)
        sub = [(h[active], c[active]) for h, c in iet_state]
        pb_, new = lstm_step(models.iet, x, sub)
        for (h, c), (h2, c2) in zip(iet_state, new):
            h[active], c[active] = h2, c2
        bins = _sample_rows(pb_, rng)
        gap = np.empty(len(active))
        for b in range(3):
            sel = bins == b
            if sel.any():
                gap[sel] = sample_iet(b + 1, rng, size=int(sel.sum()), n=iet_n_samples)
        t_next = cur_t[active] + np.maximum(np.ceil(gap), 1).astype(np.int64)
        alive = t_next < duration_s
        active, e_next, t_next = active[alive], e_next[alive], t_next[alive]
        if len(active):
            emit(active, e_next, t_next)
            cur_e[active], cur_t[active] = e_next, t_next
    return _streams(books, times, types, ranks, rng, intl_incoming_fraction)


def _streams(books, times, types, ranks, rng, intl_in):
    out = []
    for pb, t, e, r in zip(books, times, types, ranks):
        e = np.asarray(e, dtype=np.int8)
        incoming = (e == EventType.INTL_CALL) & (rng.random(len(e)) < intl_in)
        out.append(UserStream(pb.user_id, np.asarray(t, dtype=np.int64), e,
                              np.asarray(r, dtype=np.int64), incoming))
    return out


# ---------------------------------------------------------------------------

@dataclass
class Interaction:
    """A resolved event owned by one local user (before cells and volumes)."""

    user_id: int
    timestamp: int
    event_type: str  # call / sms / data
    direction: str | None = None
    duration: int | None = None
    correspondent: str | None = None


@dataclass
class ResolveLog:
    counters: Counter = field(default_factory=Counter)


def _nearest_rank(candidates, ranks, target):
    """Correspondent among ``candidates`` whose rank is nearest ``target``
    (the lower rank on ties)."""
    return min(candidates, key=lambda c: (abs(ranks[c] - target), ranks[c]))


def resolve_calls(streams, graph, rng, duration_s=None, truncate_to="caller"):
    """Turn predicted streams into concrete interactions.

    Events are processed in (timestamp, user) order. A call whose caller is
    already in a call is dropped. A busy callee is replaced once by the
    eligible correspondent with the next lower rank; if that one is busy as
    well (or absent) the call is dropped. Call durations are truncated to the
    caller's next scheduled event (``truncate_to="both"``: the earlier of the
    caller's and the callee's next events). SMS ignore availability. Every local call
    or SMS induces the mirrored incoming record at the callee.
    Returns ``(interactions, log)``.
    """
    books = {pb.user_id: pb for pb in graph.phonebooks}
    user_of = graph.user_of
    queue = []
    for s in streams:
        for k in range(len(s)):
            queue.append((int(s.times[k]), s.user_id, k))
    queue.sort()
    by_user = {s.user_id: s for s in streams}
    busy = {}
    out = []
    stats = ResolveLog()
    c = stats.counters
    for t, u, k in queue:
        s = by_user[u]
        e = EventType(int(s.types[k]))
        if e == EventType.DATA:
            out.append(Interaction(u, t, "data"))
            continue
        pb = books[u]
        nxt = int(s.times[k + 1]) if k + 1 < len(s) else (duration_s if duration_s else None)
        if e == EventType.INTL_CALL:
            if busy.get(u, -1) > t:
                c["dropped_busy_caller"] += 1
                continue
            corr = _nearest_rank(pb.inter, pb.ranks, s.ranks[k])
            d = _duration(rng, t, nxt)
            busy[u] = t + d
            out.append(Interaction(u, t, "call", "IMT" if s.intl_incoming[k] else "IMO", d, corr))
            c["intl_calls"] += 1
            continue
        elig = pb.out + pb.both
        corr = _nearest_rank(elig, pb.ranks, s.ranks[k])
        v = user_of[corr]
        if e == EventType.LOCAL_SMS:
            out.append(Interaction(u, t, "sms", "MO", None, corr))
            out.append(Interaction(v, t, "sms", "MT", None, pb.phone))
            c["sms"] += 1
            continue
        if busy.get(u, -1) > t:
            c["dropped_busy_caller"] += 1
            continue
        if busy.get(v, -1) > t:
            lower = [x for x in elig if pb.ranks[x] < pb.ranks[corr]]
            if not lower:
                c["dropped_busy_callee"] += 1
                continue
            corr = max(lower, key=lambda x: pb.ranks[x])
            v = user_of[corr]
            if busy.get(v, -1) > t:
                c["dropped_busy_callee"] += 1
                continue
            c["retargeted"] += 1
        if truncate_to == "both":
            tv = by_user[v].times
            j = int(np.searchsorted(tv, t, side="right"))
            if j < len(tv):
                nxt = int(tv[j]) if nxt is None else min(nxt, int(tv[j]))
        d = _duration(rng, t, nxt)
        busy[u] = busy[v] = t + d
        out.append(Interaction(u, t, "call", "MO", d, corr))
        out.append(Interaction(v, t, "call", "MT", d, pb.phone))
        c["local_calls"] += 1
    for key in ("dropped_busy_caller", "dropped_busy_callee", "retargeted"):
        if c[key]:
            log.info("%s: %d", key, c[key])
    return out, stats


def _duration(rng, t, next_t):
    d = max(int(math.ceil(float(sample_call_duration(rng)))), 1)
    if next_t is not None:
        d = min(d, max(int(next_t) - t, 1))
    return d


def attach_space_and_metrics(interactions, cells, grid_times, identities, volume_table,
                             volume_profiles, rng):
    """CdR records with the owner's cell at the latest position sample at or
    before each event, and sampled volumes for data events.

    ``cells`` is ``(N, T)`` indexed by user id, ``grid_times`` the sample
    times, ``volume_profiles`` the per-user volume profile names.
    """
    ids = {i.user_id: i for i in identities}
    ts = np.array([it.timestamp for it in interactions], dtype=np.int64)
    idx = np.searchsorted(grid_times, ts, side="right") - 1
    early = int((idx < 0).sum())
    if early:
        log.warning("%d events precede the first position sample; first cell used", early)
    idx = np.maximum(idx, 0)
    data = [j for j, it in enumerate(interactions) if it.event_type == "data"]
    vols = {}
    if data:
        prof = np.array([volume_profiles[interactions[j].user_id] for j in data])
        v = sample_data_volume(prof, ts[data], volume_table, rng)
        vols = dict(zip(data, np.maximum(np.asarray(v, dtype=np.int64), 1)))
    out = []
    for j, it in enumerate(interactions):
        ident = ids[it.user_id]
        cell = int(cells[it.user_id, idx[j]])
        if it.event_type == "data":
            out.append(CdrRecord(ident.phone, ident.imei, cell, it.timestamp, "data",
                                 data_volume=int(vols[j])))
        else:
            out.append(CdrRecord(ident.phone, ident.imei, cell, it.timestamp, it.event_type,
                                 it.direction, it.duration, it.correspondent))
    out.sort(key=lambda r: (r.timestamp, r.phone, r.direction or ""))
    return out


def split_by_operator(records, identities, n_operators):
    """Records grouped by the operator of the owning phone."""
    op = {i.phone: i.operator for i in identities}
    out = [[] for _ in range(n_operators)]
    for r in records:
        out[op[r.phone]].append(r)
    return out


def write_operator_files(records_by_op, paths):
    for recs, path in zip(records_by_op, paths):
        write_cdr_csv(path, recs)
