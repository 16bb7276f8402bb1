import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdrsynth.core import (CdrRecord, ConfigError, EventType, PipelineConfig, Projection,
                           load_config, luhn_valid, parse_config_text, random_imei,
                           read_cdr_csv, seeded_rng, write_cdr_csv)


def test_empty_config_has_documented_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    cfg = load_config(p)
    # En-WDM table values
    assert cfg.office_size == 100
    assert cfg.min_group_size == 1 and cfg.max_group_size == 5
    assert cfg.min_evening_s == 3600 and cfg.max_evening_s == 4 * 3600
    assert cfg.prob_own_car == 0.19
    assert (cfg.world_width, cfg.world_height) == (10000, 8000)
    assert cfg.home_cluster_size == (250, 150)
    assert cfg.office_cluster_size == (500, 300)
    assert cfg.exploration_shares == (0.2027, 0.5475, 0.2498)
    assert cfg.p_night == (0.8, 0.5, 0.2)
    assert cfg.distance_shares == (0.72, 0.19, 0.09)


def test_config_parse_and_errors():
    cfg = parse_config_text("seed = 7\nn_users = 12  # comment\noperators = 244-91\n"
                            "user_share = 1.0\n")
    assert cfg.seed == 7 and cfg.n_users == 12 and cfg.operators == ("244-91",)
    with pytest.raises(ConfigError, match="user_share"):
        parse_config_text("user_share = 0.6, 0.3")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\nthis is not valid\n")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_text("bogus = 3")
    with pytest.raises(ConfigError, match="dropout"):
        parse_config_text("dropout = 1.5")


def test_seed_twice_gives_identical_config():
    a = parse_config_text("seed = 42")
    b = parse_config_text("seed = 42")
    assert a == b and a.hash() == b.hash()


_SCALAR_KEYS = [f.name for f in dataclasses.fields(PipelineConfig)
                if isinstance(f.default, (int, float)) and not isinstance(f.default, bool)
                and f.name != "seed"]


@given(st.sampled_from(_SCALAR_KEYS))
@settings(max_examples=40, deadline=None)
def test_config_hash_changes_with_any_key(key):
    cfg = PipelineConfig()
    v = getattr(cfg, key)
    changed = dataclasses.replace(cfg, **{key: type(v)(v + 1)})
    assert changed.hash() != cfg.hash()
    assert dataclasses.replace(cfg, **{key: v}).hash() == cfg.hash()


def test_seeded_rng_streams():
    a = seeded_rng(42, "mobility").random(1000)
    assert np.array_equal(a, seeded_rng(42, "mobility").random(1000))
    assert not np.array_equal(a, seeded_rng(42, "traffic").random(1000))
    assert not np.array_equal(seeded_rng(42, "x").random(10), seeded_rng(43, "x").random(10))


def test_event_type_classes():
    assert len(EventType) == 4
    assert EventType.parse("local_sms") is EventType.LOCAL_SMS
    assert not EventType.DATA.needs_correspondent
    with pytest.raises(ValueError):
        EventType.parse("fax")


def test_luhn_known_imei():
    # 49015420323751 has check digit 8
    assert luhn_valid("490154203237518")
    assert not luhn_valid("490154203237519")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_random_imei_is_luhn_valid(seed):
    imei = random_imei(np.random.default_rng(seed))
    assert len(imei) == 15 and luhn_valid(imei)


@given(st.floats(-5000, 15000), st.floats(-5000, 15000))
def test_projection_round_trip(x, y):
    p = Projection()
    lat, lon = p.to_latlon(x, y)
    x2, y2 = p.to_xy(lat, lon)
    assert abs(x2 - x) < 1e-6 and abs(y2 - y) < 1e-6


IMEI = "490154203237518"

_record = st.one_of(
    st.builds(CdrRecord, phone=st.just("2449100001"), imei=st.just(IMEI),
              cell_id=st.integers(1, 500), timestamp=st.integers(0, 10**6),
              event_type=st.just("call"), direction=st.sampled_from(["MO", "MT", "IMO", "IMT"]),
              call_duration=st.integers(1, 10**4), correspondent=st.just("2440500002")),
    st.builds(CdrRecord, phone=st.just("2449100001"), imei=st.just(IMEI),
              cell_id=st.integers(1, 500), timestamp=st.integers(0, 10**6),
              event_type=st.just("sms"), direction=st.sampled_from(["MO", "MT"]),
              correspondent=st.just("2440500002")),
    st.builds(CdrRecord, phone=st.just("2449100001"), imei=st.just(IMEI),
              cell_id=st.integers(1, 500), timestamp=st.integers(0, 10**6),
              event_type=st.just("data"), data_volume=st.integers(1, 10**9)),
)


@given(st.lists(_record, max_size=20))
@settings(max_examples=30, deadline=None)
def test_cdr_csv_round_trip(tmp_path_factory, records):
    p = tmp_path_factory.mktemp("cdr") / "t.csv"
    for r in records:
        r.validate()
    write_cdr_csv(p, records)
    assert read_cdr_csv(p) == records


def test_cdr_field_presence_rules():
    ok = CdrRecord("1", IMEI, 1, 10, "data", data_volume=5)
    ok.validate(horizon=11)
    bad = [
        dataclasses.replace(ok, data_volume=0),
        dataclasses.replace(ok, call_duration=3),
        dataclasses.replace(ok, imei="490154203237519"),
        dataclasses.replace(ok, timestamp=11),
        CdrRecord("1", IMEI, 1, 10, "call", "MO", None, "2"),
        CdrRecord("1", IMEI, 1, 10, "sms", "IMO", None, "2"),
        CdrRecord("1", IMEI, 1, 10, "sms", "MO", 4, "2"),
    ]
    for r in bad:
        with pytest.raises(ValueError):
            r.validate(horizon=11)
