from collections import Counter

import numpy as np

import cdrsynth.combiner as combiner
from cdrsynth.combiner import (Interaction, TrafficModels, UserStream, allowed_types,
                               attach_space_and_metrics, generate_sequences, resolve_calls,
                               split_by_operator)
from cdrsynth.core import EventType, PipelineConfig, random_imei
from cdrsynth.seqmodel.lstm import zero_params
from cdrsynth.social import Phonebook, PhoneIdentity, SocialGraph
from cdrsynth.statmodel import VolumeProfileTable

PHONES = ["2449100000", "2449100001", "2440500002", "2449100003"]


def _ids(n=4):
    rng = np.random.default_rng(0)
    return [PhoneIdentity(u, PHONES[u], random_imei(rng), 0 if PHONES[u][3:5] == "91" else 1)
            for u in range(n)]


def _full_graph(n=4, inter=True):
    """Everybody has everybody else in 'both', ranked by user id."""
    ids = _ids(n)
    books = []
    for u in range(n):
        others = [PHONES[v] for v in range(n) if v != u]
        pb = Phonebook(u, PHONES[u], both=others)
        if inter:
            pb.inter = [f"33{u:02d}1234567"]
        allc = pb.inter + pb.both
        pb.ranks = {c: k + 1 for k, c in enumerate(allc)}
        books.append(pb)
    return SocialGraph(books, ids)


def _models():
    return TrafficModels(zero_params(37, (4,), 4), zero_params(37, (4,), 3),
                         zero_params(36, (4,), 1, "mae"))


def _gen(graph, duration, seed=0):
    return generate_sequences(_models(), graph, duration, np.random.default_rng(seed),
                              np.full(4, 0.25))


def test_users_without_inter_never_call_abroad():
    g = _full_graph(inter=False)
    assert not allowed_types(g.phonebooks[0])[EventType.INTL_CALL]
    streams = _gen(g, 30 * 86400)
    assert sum(len(s) for s in streams) > 50
    assert all(not np.any(s.types == EventType.INTL_CALL) for s in streams)


def test_no_correspondents_means_data_only():
    ids = _ids(1)
    g = SocialGraph([Phonebook(0, PHONES[0])], ids)
    s = _gen(g, 86400 * 2)[0]
    assert len(s) > 0 and np.all(s.types == EventType.DATA)


def test_zero_horizon_gives_empty_streams():
    assert all(len(s) == 0 for s in _gen(_full_graph(), 0))


def test_generation_is_deterministic():
    a = _gen(_full_graph(), 86400, seed=5)
    b = _gen(_full_graph(), 86400, seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.times, y.times) and np.array_equal(x.types, y.types)
        assert np.array_equal(x.ranks, y.ranks)


def test_streams_are_ordered_within_horizon_and_ranks_clamped():
    g = _full_graph()
    for s in _gen(g, 2 * 86400, seed=2):
        assert np.all(np.diff(s.times) >= 1) and s.times.max() < 2 * 86400
        social = s.types != EventType.DATA
        assert np.all(s.ranks[social] >= 1) and np.all(s.ranks[social] <= 4)
        assert np.all(s.ranks[~social] == 0)


def _stream(u, rows):
    t = np.array([r[0] for r in rows], np.int64)
    e = np.array([int(r[1]) for r in rows], np.int8)
    r = np.array([r[2] for r in rows], np.int64)
    return UserStream(u, t, e, r, np.zeros(len(rows), bool))


def _fixed_duration(monkeypatch, seconds):
    monkeypatch.setattr(combiner, "sample_call_duration", lambda rng, size=None: float(seconds))


def test_duration_truncated_to_next_event(monkeypatch):
    _fixed_duration(monkeypatch, 500)
    g = _full_graph()
    call = int(EventType.LOCAL_CALL)
    streams = [_stream(0, [(1000, call, 4), (1120, 0, 0)])] + \
        [_stream(u, []) for u in (1, 2, 3)]
    out, _ = resolve_calls(streams, g, np.random.default_rng(0))
    calls = [i for i in out if i.event_type == "call"]
    assert [(i.user_id, i.direction, i.duration) for i in calls] == [(0, "MO", 120), (3, "MT", 120)]
    # without a later event the horizon caps the call
    streams[0] = _stream(0, [(1000, call, 4)])
    out, _ = resolve_calls(streams, g, np.random.default_rng(0), duration_s=1300)
    assert out[0].duration == 300


def test_truncate_to_both(monkeypatch):
    _fixed_duration(monkeypatch, 500)
    g = _full_graph()
    call = int(EventType.LOCAL_CALL)
    streams = [_stream(0, [(1000, call, 4), (1400, 0, 0)]), _stream(1, []), _stream(2, []),
               _stream(3, [(1050, 0, 0)])]
    out, _ = resolve_calls(streams, g, np.random.default_rng(0), truncate_to="both")
    assert out[0].duration == 50


def test_busy_callee_is_retargeted(monkeypatch):
    _fixed_duration(monkeypatch, 1000)
    g = _full_graph()
    call = int(EventType.LOCAL_CALL)
    # every book ranks its foreign number 1 and the local users 2..4 by id
    streams = [_stream(0, [(10, call, 4)]),
               _stream(1, [(0, call, 4)]),  # 1 -> 3
               _stream(2, []),
               _stream(3, [(30, call, 2)])]  # 3 is still talking to 1
    out, log = resolve_calls(streams, g, np.random.default_rng(0))
    mo = [(i.user_id, i.timestamp, i.correspondent) for i in out if i.direction == "MO"]
    # at t=10 user 3 is busy: 0 falls back to rank 3, user 2
    assert mo == [(1, 0, PHONES[3]), (0, 10, PHONES[2])]
    assert log.counters["retargeted"] == 1 and log.counters["dropped_busy_caller"] == 1


def test_retarget_fails_when_lower_rank_busy(monkeypatch):
    _fixed_duration(monkeypatch, 1000)
    g = _full_graph()
    call = int(EventType.LOCAL_CALL)
    # 1 -> 3 at t=0; 2 wants 3 (busy), its fallback is 1 (busy as well)
    streams = [_stream(0, [(10, call, 4)]), _stream(1, [(0, call, 4)]),
               _stream(2, [(5, call, 4)]), _stream(3, [])]
    out, log = resolve_calls(streams, g, np.random.default_rng(0))
    assert log.counters["dropped_busy_callee"] == 1
    # 0 then reaches 2, which stayed free
    assert log.counters["retargeted"] == 1 and log.counters["local_calls"] == 2


def test_no_overlapping_calls_and_matched_mo_mt():
    g = _full_graph()
    streams = _gen(g, 2 * 86400, seed=3)
    out, _ = resolve_calls(streams, g, np.random.default_rng(1), duration_s=2 * 86400)
    for u in range(4):
        iv = sorted((i.timestamp, i.timestamp + i.duration) for i in out
                    if i.user_id == u and i.event_type == "call")
        assert all(b[0] >= a[1] for a, b in zip(iv, iv[1:]))
    c = Counter((i.event_type, i.direction) for i in out)
    assert c[("call", "MO")] == c[("call", "MT")] and c[("sms", "MO")] == c[("sms", "MT")]
    books = {pb.user_id: pb for pb in g.phonebooks}
    for i in out:
        if i.correspondent:
            pb = books[i.user_id]
            assert i.correspondent in pb.inter + pb.out + pb.inc + pb.both


def test_cell_floor_rule_and_volumes():
    ids = _ids(2)
    grid = np.array([0, 3600, 3660])
    cells = np.array([[5, 6, 7], [8, 9, 10]])
    table = VolumeProfileTable.from_config(PipelineConfig())
    its = [Interaction(0, 3601, "data"), Interaction(1, 3660, "sms", "MO", None, PHONES[0])]
    recs = attach_space_and_metrics(its, cells, grid, ids, table, [0, 1],
                                    np.random.default_rng(0))
    assert [r.cell_id for r in recs] == [6, 10]
    assert recs[0].data_volume > 0
    for r in recs:
        r.validate()


def test_split_by_operator_ownership():
    ids = _ids(3)
    table = VolumeProfileTable.from_config(PipelineConfig())
    its = [Interaction(0, 10, "call", "MO", 30, PHONES[2]),
           Interaction(2, 10, "call", "MT", 30, PHONES[0]),
           Interaction(1, 20, "data")]
    recs = attach_space_and_metrics(its, np.ones((3, 1), int), np.array([0]), ids, table,
                                    [0, 0, 0], np.random.default_rng(0))
    parts = split_by_operator(recs, ids, 2)
    assert [(r.phone, r.direction) for r in parts[1]] == [(PHONES[2], "MT")]
    assert {r.phone for r in parts[0]} == {PHONES[0], PHONES[1]}
    assert sum(map(len, parts)) == len(recs)
    single = split_by_operator(recs, [PhoneIdentity(i.user_id, i.phone, i.imei, 0)
                                      for i in ids], 1)
    assert len(single[0]) == len(recs)
