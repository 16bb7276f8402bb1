"""Reference traffic CdRs: ingestion, statistics, a planted-structure bootstrap
generator, and train/validation/test splits.

A reference file has one event per line::

    timestamp,user_id,event_type,correspondent_id,direction,call_duration

``event_type`` is one of ``data``, ``local_call``, ``intl_call``, ``local_sms``
and ``direction`` is ``out`` or ``in``. Incoming local calls are kept for the
social statistics but are not part of the modelled sequences: the generator
induces them from outgoing calls.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (DAY, WEEK, N_EVENT_TYPES, REF_HEADER, EventType, iter_csv_rows,
                   write_rows)
from .statmodel import CALL_DURATION_DIST, iet_class, sample_call_duration

log = logging.getLogger(__name__)

CATEGORIES = ("inter", "out", "in", "both")


@dataclass(frozen=True)
class RefEvent:
    timestamp: int
    user_id: int
    event_type: EventType
    correspondent_id: str = ""
    incoming: bool = False
    call_duration: int = 0


@dataclass
class UserEvents:
    """Chronological events of one user, stored column-wise."""

    user_id: int
    times: np.ndarray
    types: np.ndarray
    corr: np.ndarray  # object array, "" when no correspondent
    incoming: np.ndarray
    durations: np.ndarray

    def __len__(self):
        return len(self.times)

    @property
    def modelled(self):
        """Mask of events the traffic models see (all but incoming local ones)."""
        local = (self.types == EventType.LOCAL_CALL) | (self.types == EventType.LOCAL_SMS)
        return ~(local & self.incoming)

    def subset(self, mask):
        return UserEvents(self.user_id, self.times[mask], self.types[mask], self.corr[mask],
                          self.incoming[mask], self.durations[mask])

    def events(self):
        for i in range(len(self)):
            yield RefEvent(int(self.times[i]), self.user_id, EventType(int(self.types[i])),
                           str(self.corr[i]), bool(self.incoming[i]), int(self.durations[i]))


def _user_from_lists(uid, rows):
    rows.sort(key=lambda r: r[0])
    arr = list(zip(*rows))
    return UserEvents(
        uid,
        np.asarray(arr[0], dtype=np.int64),
        np.asarray(arr[1], dtype=np.int8),
        np.asarray(arr[2], dtype=object),
        np.asarray(arr[3], dtype=bool),
        np.asarray(arr[4], dtype=np.int64),
    )


def filter_users(per_user: dict, min_events=3):
    """Drop users with fewer than ``min_events`` events or duplicate timestamps."""
    kept = {}
    for uid in sorted(per_user):
        ev = per_user[uid]
        if len(ev) < min_events:
            continue
        if len(np.unique(ev.times)) != len(ev.times):
            continue
        kept[uid] = ev
    return kept


def ingest_ref(path, min_events=3) -> dict:
    """Load a reference CSV into ``{user_id: UserEvents}``.

    Users with fewer than ``min_events`` events, or with two events at the
    same timestamp, are removed. A malformed row raises ``ValueError``
    carrying its line number.
    """
    grouped: dict[int, list] = {}
    for lineno, row in iter_csv_rows(path, REF_HEADER):
        try:
            ts, uid, etype, corr, direction, dur = (c.strip() for c in row[:6])
            t = int(ts)
            if t < 0:
                raise ValueError("negative timestamp")
            et = EventType.parse(etype)
            if direction not in ("out", "in"):
                raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")
            if et.needs_correspondent and not corr:
                raise ValueError("call/SMS without correspondent")
            d = int(float(dur)) if dur else 0
            if et in (EventType.LOCAL_CALL, EventType.INTL_CALL) and d <= 0:
                raise ValueError("call without positive duration")
            grouped.setdefault(int(uid), []).append(
                (t, int(et), corr, direction == "in", d))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed row at line {lineno}: {exc}") from None
    per_user = {uid: _user_from_lists(uid, rows) for uid, rows in grouped.items()}
    return filter_users(per_user, min_events)


def write_ref_csv(path, per_user: dict):
    rows = []
    for uid in sorted(per_user):
        ev = per_user[uid]
        for i in range(len(ev)):
            et = EventType(int(ev.types[i]))
            dur = int(ev.durations[i]) if et in (EventType.LOCAL_CALL, EventType.INTL_CALL) else ""
            rows.append([int(ev.times[i]), uid, et.label, ev.corr[i],
                         "in" if ev.incoming[i] else "out", dur])
    write_rows(path, REF_HEADER, rows)


# ---------------------------------------------------------------------------
# statistics

def correspondent_categories(ev: UserEvents) -> dict:
    """Category of every correspondent of one user, from event directions."""
    flags: dict[str, list] = {}
    for c, t, inc in zip(ev.corr, ev.types, ev.incoming):
        if not c:
            continue
        f = flags.setdefault(c, [False, False, False])  # intl, out, in
        if t == EventType.INTL_CALL:
            f[0] = True
        elif inc:
            f[2] = True
        else:
            f[1] = True
    cats = {}
    for c, (intl, out, inc) in flags.items():
        if intl:
            cats[c] = "inter"
        elif out and inc:
            cats[c] = "both"
        elif out:
            cats[c] = "out"
        else:
            cats[c] = "in"
    return cats


def friendship_ranks(ev: UserEvents) -> dict:
    """Rank of every correspondent by ascending event count (1 = fewest).

    Count ties are broken by correspondent id.
    """
    counts: dict[str, int] = {}
    for c in ev.corr:
        if c:
            counts[c] = counts.get(c, 0) + 1
    order = sorted(counts, key=lambda c: (counts[c], c))
    return {c: i + 1 for i, c in enumerate(order)}


def modelled_sequence(ev: UserEvents) -> UserEvents:
    return ev.subset(ev.modelled)


@dataclass
class RefStats:
    corr_count_dist: np.ndarray  # P(#c = k) for k = 1..MAX at index k-1
    category_means: np.ndarray  # inter, out, in, both
    iet_samples_per_bin: tuple
    call_durations: np.ndarray
    seq_lengths: np.ndarray
    event_type_marginals: np.ndarray
    intl_incoming_fraction: float = 0.0
    rank_proportions: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def max_correspondents(self):
        return len(self.corr_count_dist)

    def seq_len_quantile(self, q):
        return int(math.ceil(np.quantile(self.seq_lengths, q)))

    def to_json(self):
        return {
            "corr_count_dist": self.corr_count_dist.tolist(),
            "category_means": self.category_means.tolist(),
            "iet_samples_per_bin": [s.tolist() for s in self.iet_samples_per_bin],
            "call_durations": self.call_durations.tolist(),
            "seq_lengths": self.seq_lengths.tolist(),
            "event_type_marginals": self.event_type_marginals.tolist(),
            "intl_incoming_fraction": self.intl_incoming_fraction,
            "rank_proportions": self.rank_proportions.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            np.asarray(d["corr_count_dist"], dtype=float),
            np.asarray(d["category_means"], dtype=float),
            tuple(np.asarray(s, dtype=float) for s in d["iet_samples_per_bin"]),
            np.asarray(d["call_durations"], dtype=float),
            np.asarray(d["seq_lengths"], dtype=np.int64),
            np.asarray(d["event_type_marginals"], dtype=float),
            float(d["intl_incoming_fraction"]),
            np.asarray(d["rank_proportions"], dtype=float),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def mean_rank_proportions(per_user: dict, max_rank=None) -> np.ndarray:
    """Mean share of events per friendship rank over users.

    Entry ``i`` averages ``#e_(i+1) / sum_j #e_j`` over the users that have
    at least ``i + 1`` correspondents.
    """
    props = []
    for uid in sorted(per_user):
        ev = per_user[uid]
        ranks = friendship_ranks(ev)
        if not ranks:
            continue
        counts = np.zeros(len(ranks))
        for c in ev.corr:
            if c:
                counts[ranks[c] - 1] += 1
        props.append(counts / counts.sum())
    if not props:
        return np.zeros(0)
    m = max(len(p) for p in props) if max_rank is None else max_rank
    sums = np.zeros(m)
    n = np.zeros(m)
    for p in props:
        k = min(len(p), m)
        sums[:k] += p[:k]
        n[:k] += 1
    return np.divide(sums, n, out=np.zeros(m), where=n > 0)


def extract_stats(per_user: dict) -> RefStats:
    """Empirical statistics of a reference collection.

    Correspondent counts and category proportions come from all events;
    inter-event times, sequence lengths and event-type marginals from the
    modelled sequences only.
    """
    if not per_user:
        raise ValueError("empty reference collection")
    counts = []
    cat_fracs = []
    iets = []
    durations = []
    lengths = []
    type_counts = np.zeros(N_EVENT_TYPES)
    intl_in = intl_total = 0
    for uid in sorted(per_user):
        ev = per_user[uid]
        cats = correspondent_categories(ev)
        if cats:
            counts.append(len(cats))
            v = np.array([sum(1 for c in cats.values() if c == k) for k in CATEGORIES], float)
            cat_fracs.append(v / v.sum())
        calls = (ev.types == EventType.LOCAL_CALL) | (ev.types == EventType.INTL_CALL)
        durations.append(ev.durations[calls])
        intl = ev.types == EventType.INTL_CALL
        intl_total += int(intl.sum())
        intl_in += int((intl & ev.incoming).sum())
        seq = modelled_sequence(ev)
        lengths.append(len(seq))
        type_counts += np.bincount(seq.types.astype(np.int64), minlength=N_EVENT_TYPES)
        if len(seq) > 1:
            iets.append(np.diff(seq.times))
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size:
        dist = np.bincount(counts, minlength=counts.max() + 1)[1:].astype(float)
        dist /= dist.sum()
        cat_means = np.mean(cat_fracs, axis=0)
    else:
        dist = np.array([1.0])
        cat_means = np.array([0.0, 1.0, 0.0, 0.0])
    iet = np.concatenate(iets) if iets else np.zeros(0)
    classes = iet_class(iet)
    return RefStats(
        corr_count_dist=dist,
        category_means=cat_means,
        iet_samples_per_bin=tuple(iet[classes == b].astype(float) for b in range(3)),
        call_durations=np.concatenate(durations).astype(float) if durations else np.zeros(0),
        seq_lengths=np.asarray(lengths, dtype=np.int64),
        event_type_marginals=type_counts / max(type_counts.sum(), 1),
        intl_incoming_fraction=intl_in / intl_total if intl_total else 0.0,
        rank_proportions=mean_rank_proportions(per_user),
    )


# ---------------------------------------------------------------------------
# splits

@dataclass(frozen=True)
class SplitSpec:
    """``chronological``: weeks 1-2 / 3 / 4 for every user.
    ``by_user``: users partitioned 60/20/20 over the whole trace."""

    mode: str = "chronological"
    fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.mode not in ("chronological", "by_user"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def split(per_user: dict, spec: SplitSpec, rng=None, duration_s=None):
    """Return ``(train, valid, test)`` collections.

    Chronological splits need a trace of at least four weeks; ``duration_s``
    defaults to the last timestamp rounded up to whole weeks.
    """
    if spec.mode == "chronological":
        if duration_s is None:
            last = max((int(ev.times[-1]) for ev in per_user.values() if len(ev)), default=0)
            duration_s = -(-(last + 1) // WEEK) * WEEK
        if duration_s < 4 * WEEK:
            raise ValueError(f"chronological split needs >= 4 weeks, trace has "
                             f"{duration_s / DAY:.1f} days")
        windows = ((0, 2 * WEEK), (2 * WEEK, 3 * WEEK), (3 * WEEK, 4 * WEEK))
        out = []
        for lo, hi in windows:
            part = {}
            for uid in sorted(per_user):
                ev = per_user[uid]
                sel = (ev.times >= lo) & (ev.times < hi)
                if sel.any():
                    part[uid] = ev.subset(sel)
            out.append(part)
        return tuple(out)
    if rng is None:
        raise ValueError("by_user split needs an rng")
    users = np.array(sorted(per_user))
    perm = rng.permutation(users)
    n = len(users)
    n_train = int(round(spec.fractions[0] * n))
    n_valid = int(round(spec.fractions[1] * n))
    groups = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    return tuple({int(u): per_user[int(u)] for u in sorted(g)} for g in groups)


# ---------------------------------------------------------------------------
# planted-structure bootstrap

def stationary_distribution(P):
    """Stationary vector of a row-stochastic matrix, zero on unused states."""
    idx = np.flatnonzero(P.sum(axis=1) > 0)
    sub = P[np.ix_(idx, idx)]
    w, v = np.linalg.eig(sub.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    out = np.zeros(len(P))
    out[idx] = pi / pi.sum()
    return out


def planted_transition_matrix(self_transition, stickiness, base_mix, allowed=None):
    """Event-type Markov chain whose stationary repeat probability equals
    ``self_transition``.

    Row ``i`` keeps ``s * stickiness[i]`` on the diagonal and spreads the rest
    over the other types in proportion to ``base_mix``. The common factor
    ``s`` is found by bisection. ``allowed`` restricts the chain to a subset
    of types (rows/columns of the others are zero).
    """
    k = np.asarray(stickiness, dtype=float)
    base = np.asarray(base_mix, dtype=float)
    allowed = np.ones(N_EVENT_TYPES, bool) if allowed is None else np.asarray(allowed, bool)
    idx = np.flatnonzero(allowed)

    def build(s):
        P = np.zeros((N_EVENT_TYPES, N_EVENT_TYPES))
        for i in idx:
            w = base * allowed
            w[i] = 0.0
            if w.sum() == 0:
                P[i, i] = 1.0
                continue
            d = min(s * k[i], 0.995)
            P[i] = (1 - d) * w / w.sum()
            P[i, i] = d
        return P

    def repeat_rate(P):
        return float(stationary_distribution(P) @ np.diag(P))

    if len(idx) == 1:
        return build(1.0)
    lo, hi = 0.0, 1.0 / max(k[idx].min(), 1e-9)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if repeat_rate(build(mid)) < self_transition:
            lo = mid
        else:
            hi = mid
    return build(0.5 * (lo + hi))


def _operational_to_real(tau, night_ratio):
    """Map operational time (unit intensity) to wall-clock seconds for an
    intensity of ``night_ratio`` during 00-06 h and 1 elsewhere."""
    night = 6 * 3600
    day_op = night * night_ratio + (DAY - night)
    days = np.floor(tau / day_op)
    rem = tau - days * day_op
    night_op = night * night_ratio
    if night_ratio > 0:
        in_night = rem < night_op
        t = np.where(in_night, rem / night_ratio, night + (rem - night_op))
    else:
        t = night + rem
    return days * DAY + t


def _increasing_ints(t):
    t = np.floor(t).astype(np.int64)
    ar = np.arange(len(t))
    return np.maximum.accumulate(t - ar) + ar


@dataclass
class BootstrapTruth:
    """What was planted, for checking recovery."""

    transition: np.ndarray
    categories: dict  # user -> list of category names per correspondent
    night_ratio: float


def bootstrap_ref(cfg, rng, path=None):
    """Synthesise a reference trace with documented, recoverable structure.

    Planted structure: a first-order event-type Markov chain with a given
    stationary self-transition rate; diurnal intensity reduced by
    ``boot_night_ratio`` between 00 h and 06 h; lognormal inter-event times
    (in operational time) whose scale depends on the next event type and on
    a per-user activity level; per-user Zipf-weighted correspondent choice
    with categories drawn from ``boot_category_means``; every user has at
    least three events. Returns ``(per_user, truth)`` and writes the CSV when
    ``path`` is given.
    """
    horizon = cfg.boot_duration_s
    days = horizon / DAY
    r = cfg.boot_night_ratio
    op_day = 6 * 3600 * r + 18 * 3600
    op_horizon = days * op_day
    shift = np.asarray(cfg.boot_iet_type_shift, dtype=float)
    sigma = cfg.boot_iet_sigma
    cat_p = np.asarray(cfg.boot_category_means, dtype=float)

    phonebooks = []
    for _ in range(cfg.boot_n_users):
        n_corr = int(min(rng.geometric(1.0 / cfg.boot_mean_correspondents),
                         cfg.boot_max_correspondents))
        phonebooks.append([CATEGORIES[i] for i in rng.choice(4, size=n_corr, p=cat_p)])
    # Users without local or international correspondents only emit data and
    # repeat with probability 1; the other chains absorb the difference so the
    # population-level repeat rate equals the planted one.
    data_only = np.mean([not any(c != "in" for c in cats) for cats in phonebooks])
    target = cfg.boot_self_transition
    if data_only < 1:
        target = min(max((target - data_only) / (1 - data_only), 0.0), 0.99)
    full = planted_transition_matrix(target, cfg.boot_stickiness, cfg.boot_base_mix)
    per_user = {}
    chains = {}
    for uid, cats in enumerate(phonebooks):
        for _attempt in range(100):
            ev = _bootstrap_user(uid, cats, cfg, rng, target, chains, shift, sigma,
                                 op_day, op_horizon, horizon, r)
            if len(ev) >= 3:
                break
        per_user[uid] = ev
    if path is not None:
        write_ref_csv(path, per_user)
    return per_user, BootstrapTruth(full, dict(enumerate(phonebooks)), r)


def _bootstrap_user(uid, cats, cfg, rng, target, chains, shift, sigma, op_day,
                    op_horizon, horizon, r):
    n_corr = len(cats)
    zipf = 1.0 / np.arange(1, n_corr + 1) ** cfg.boot_zipf
    local_elig = [k for k, c in enumerate(cats) if c in ("out", "both")]
    intl_elig = [k for k, c in enumerate(cats) if c == "inter"]
    in_elig = [k for k, c in enumerate(cats) if c in ("in", "both")]
    allowed = np.array([True, bool(local_elig), bool(intl_elig), bool(local_elig)])
    key = tuple(allowed)
    if key not in chains:
        chains[key] = planted_transition_matrix(target, cfg.boot_stickiness,
                                                cfg.boot_base_mix, allowed)
    P = chains[key]
    cum = np.cumsum(P, axis=1)

    rate = cfg.boot_events_per_day * math.exp(cfg.boot_rate_sigma * rng.standard_normal()
                                              - 0.5 * cfg.boot_rate_sigma ** 2)
    mean_shift = math.log(float(stationary_distribution(P) @ np.exp(shift)))
    mu = math.log(op_day / rate) - 0.5 * sigma ** 2 - mean_shift
    n_max = int(op_horizon / op_day * rate * 3) + 20
    start_p = np.where(allowed, np.asarray(cfg.boot_base_mix), 0.0)
    e = int(rng.choice(N_EVENT_TYPES, p=start_p / start_p.sum()))
    types = [e]
    u = rng.random(n_max)
    for i in range(1, n_max):
        e = int(np.searchsorted(cum[e], u[i] * cum[e, -1], side="right"))
        types.append(min(e, N_EVENT_TYPES - 1))
    types = np.asarray(types, dtype=np.int8)
    steps = np.exp(mu + shift[types[1:]] + sigma * rng.standard_normal(n_max - 1))
    tau0 = rng.random() * op_day / rate
    tau = tau0 + np.concatenate([[0.0], np.cumsum(steps)])
    keep = tau < op_horizon
    tau, types = tau[keep], types[keep]
    times = _increasing_ints(_operational_to_real(tau, r))
    ok = times < horizon
    times, types = times[ok], types[ok]
    n = len(times)

    corr = np.full(n, "", dtype=object)
    incoming = np.zeros(n, dtype=bool)

    def cover(kind_mask_fn, elig, new_type_fn):
        pos = np.flatnonzero(kind_mask_fn(types))
        short = len(elig) - len(pos)
        if short > 0:
            data_pos = np.flatnonzero(types == EventType.DATA)
            conv = rng.permutation(data_pos)[:short]
            for p in conv:
                types[p] = new_type_fn()
            pos = np.flatnonzero(kind_mask_fn(types))
        if not len(pos) or not elig:
            return
        w = zipf[elig] / zipf[elig].sum()
        picks = np.asarray(elig)[rng.choice(len(elig), size=len(pos), p=w)]
        first = rng.permutation(pos)[:len(elig)]
        picks[np.searchsorted(pos, np.sort(first))] = np.asarray(elig)[
            rng.permutation(len(elig))[:len(first)]]
        for p, k in zip(pos, picks):
            corr[p] = f"u{uid}c{k}"

    sms_share = cfg.boot_base_mix[3] / (cfg.boot_base_mix[1] + cfg.boot_base_mix[3])
    cover(lambda t: (t == EventType.LOCAL_CALL) | (t == EventType.LOCAL_SMS), local_elig,
          lambda: EventType.LOCAL_SMS if rng.random() < sms_share else EventType.LOCAL_CALL)
    cover(lambda t: t == EventType.INTL_CALL, intl_elig, lambda: EventType.INTL_CALL)
    intl = types == EventType.INTL_CALL
    incoming[intl] = rng.random(int(intl.sum())) < cfg.boot_intl_incoming

    # incoming local calls from in/both correspondents, outside the modelled sequence
    in_times = np.zeros(0, dtype=np.int64)
    in_corr = []
    if in_elig:
        k = max(int(rng.poisson(cfg.boot_incoming_per_day * horizon / DAY)), len(in_elig))
        w = zipf[in_elig] / zipf[in_elig].sum()
        callers = list(rng.permutation(in_elig)) + list(
            np.asarray(in_elig)[rng.choice(len(in_elig), size=k - len(in_elig), p=w)])
        in_tau = np.sort(rng.random(k) * op_horizon)
        in_times = np.floor(_operational_to_real(in_tau, r)).astype(np.int64)
        taken = set(times.tolist())
        for j in range(k):
            t = int(min(in_times[j], horizon - 1))
            while t in taken:
                t = t + 1 if t + 1 < horizon else t - 1
            taken.add(t)
            in_times[j] = t
        in_corr = [f"u{uid}c{c}" for c in callers]

    all_times = np.concatenate([times, in_times])
    all_types = np.concatenate([types, np.full(len(in_times), EventType.LOCAL_CALL, np.int8)])
    all_corr = np.concatenate([corr, np.asarray(in_corr, dtype=object)])
    all_in = np.concatenate([incoming, np.ones(len(in_times), bool)])
    calls = (all_types == EventType.LOCAL_CALL) | (all_types == EventType.INTL_CALL)
    durations = np.zeros(len(all_times), dtype=np.int64)
    if calls.any():
        durations[calls] = np.maximum(
            np.ceil(sample_call_duration(rng, size=int(calls.sum()), dist=CALL_DURATION_DIST)),
            1).astype(np.int64)
    order = np.argsort(all_times, kind="stable")
    ev = UserEvents(uid, all_times[order], all_types[order], all_corr[order], all_in[order],
                    durations[order])
    return ev
