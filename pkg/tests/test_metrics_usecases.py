import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Polygon, box

from cdrsynth.core import CdrRecord
from cdrsynth.evaluation.mobility_metrics import (ccdf, contact_events, contacts_per_hour,
                                                  ecdf, mobility_metrics, peak_near,
                                                  radius_of_gyration, repetitiveness,
                                                  return_probability, write_table_csv)
from cdrsynth.evaluation.usecases import (PowerModelConfig, bs_power, bs_sleeping,
                                          clip_polygon_to_rect, density_map, hourly_loads,
                                          macro_of, office_overlap_share, polygon_area,
                                          sleep_decision, top_cells)
from cdrsynth.mobility.citymap import CityMap, Neighborhood, Rect
from cdrsynth.mobility.simulator import Trajectories
from cdrsynth.topology import build_topology

IMEI = "490154203237518"


def test_stationary_user_has_zero_radius():
    xy = np.zeros((2, 50, 2))
    xy[0] += (3.0, 4.0)
    xy[1, 25:] = (6.0, 8.0)
    rg = radius_of_gyration(xy)
    assert rg[0] == 0.0 and rg[1] == pytest.approx(5.0)


def test_co_located_pair_single_contact():
    times = np.arange(0, 600, 60)
    xy = np.zeros((2, len(times), 2))
    starts, gaps = contact_events(xy, times, 10.0)
    assert starts.tolist() == [0] and len(gaps) == 0
    with pytest.raises(ValueError):
        contact_events(xy[:1], times, 10.0)


def test_contact_gap_measured_from_separation():
    times = np.arange(0, 600, 60)
    xy = np.zeros((2, len(times), 2))
    xy[1, 3:6] = (100, 0)  # apart at t=180..300, together again at 360
    starts, gaps = contact_events(xy, times, 10.0)
    assert starts.tolist() == [0, 360] and gaps.tolist() == [180]


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=200))
@settings(max_examples=50, deadline=None)
def test_cdf_and_ccdf_monotone(values):
    x, f = ecdf(values)
    assert np.all(np.diff(x) >= 0) and np.all(np.diff(f) > 0) and f[-1] == 1.0
    x, c = ccdf(values)
    assert np.all(np.diff(x) > 0) and np.all(np.diff(c) < 0) and c[0] == 1.0


def test_ccdf_example():
    x, c = ccdf([1, 1, 2, 5])
    assert x.tolist() == [1, 2, 5] and c.tolist() == [1.0, 0.5, 0.25]


def test_contacts_per_hour_normalised():
    h = contacts_per_hour([3600, 3700, 7300, 86400 + 3650])
    assert h[1] == 1.0 and h[2] == pytest.approx(1 / 3) and h.sum() == pytest.approx(4 / 3)
    assert contacts_per_hour([]).sum() == 0


def test_return_probability_daily_peaks():
    times = np.arange(0, 3 * 86400, 600)
    hod = (times % 86400) / 3600
    cells = np.where((hod >= 9) & (hod < 17), 2, 1)[None, :].repeat(3, axis=0)
    lags, prob = return_probability(cells, times)
    assert prob[0] == 1.0
    assert peak_near(lags, prob, 86400) and peak_near(lags, prob, 2 * 86400)
    assert not peak_near(lags, prob, 86400 + 6 * 3600)


def test_return_probability_single_reference():
    times = np.arange(0, 7200, 60)
    cells = np.array([[1] * 60 + [2] * 60, [1] * 120])
    lags, prob = return_probability(cells, times, ref_times=[0])
    assert prob[0] == 1.0 and prob[-1] == 0.5 and lags[1] == 60


def test_repetitiveness_counts_visits():
    cells = np.array([[1, 1, 2, 1, 3, 3, 1]])  # visits: 1,2,1,3,1
    rep = repetitiveness(cells)
    assert rep[1][0] == pytest.approx(3 / 5)
    assert rep[2][0] == pytest.approx(4 / 5) and rep[3][0] == 1.0


def test_mobility_metrics_tables(tmp_path):
    times = np.arange(0, 2 * 86400, 3600)
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 50, (4, len(times), 2)).astype(np.float32)
    traj = Trajectories(times, xy, np.arange(4))
    cells = (xy[..., 0] // 25).astype(int)
    tables = mobility_metrics(traj, cells, 10.0)
    assert {"inter_contact_ccdf", "contacts_per_hour", "radius_of_gyration_cdf",
            "return_probability", "repetitiveness_top1_cdf"} <= set(tables)
    write_table_csv(tmp_path / "t.csv", tables["contacts_per_hour"])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "hour,normalized" and len(lines) == 25


# ---------------------------------------------------------------------------
# geometry

@given(st.lists(st.tuples(st.floats(-50, 150), st.floats(-50, 150)), min_size=3, max_size=8),
       st.floats(0, 40), st.floats(0, 40))
@settings(max_examples=60, deadline=None)
def test_clip_matches_shapely_on_convex_polygons(pts, x0, y0):
    hull = Polygon(pts).convex_hull
    if hull.geom_type != "Polygon" or hull.area < 1e-6:
        return
    ring = np.array(hull.exterior.coords[:-1])
    rect = Rect(x0, y0, x0 + 60, y0 + 50)
    got = polygon_area(clip_polygon_to_rect(ring, rect))
    expect = hull.intersection(box(rect.x0, rect.y0, rect.x1, rect.y1)).area
    assert got == pytest.approx(expect, abs=1e-6 * max(1.0, hull.area))


def test_polygon_area_square():
    assert polygon_area(np.array([(0, 0), (2, 0), (2, 2), (0, 2)], float)) == 4.0
    assert polygon_area(np.zeros((2, 2))) == 0.0


def test_top_cells():
    assert top_cells(np.array([1, 5, 3, 5, 0, 0, 0, 0, 0, 0]), 0.2).tolist() == [1, 3]
    assert len(top_cells(np.zeros(3))) == 1


def _rec(phone, cell, t, kind="data", dur=None):
    if kind == "data":
        return CdrRecord(phone, IMEI, cell, t, "data", data_volume=10)
    return CdrRecord(phone, IMEI, cell, t, "call", "MO", dur, "2440500000")


def test_density_map_examples():
    topo = build_topology([(1, 10, 10), (2, 90, 10), (3, 50, 90)], 100, 100)
    assert density_map([_rec("a", 1, 20 * 3600)], topo).sum() == 0
    recs = [_rec("a", 2, 9 * 3600), _rec("b", 2, 10 * 3600), _rec("b", 2, 86400 + 9 * 3600)]
    d = density_map(recs, topo)
    assert d.tolist() == [0.0, 1.5, 0.0]
    # a call started before the window counts while ongoing
    d = density_map([_rec("c", 3, 7 * 3600 + 3000, "call", 1200)], topo)
    assert d.tolist() == [0.0, 0.0, 1.0]


def test_office_overlap_share():
    topo = build_topology([(1, 25, 50), (2, 75, 50)], 100, 100)
    hoods = [Neighborhood("office", Rect(60, 40, 80, 60), 1.0, 0),
             Neighborhood("home", Rect(10, 10, 20, 20), 1.0, 0)]
    city = CityMap(100.0, 100.0, np.array([[0, 0], [100, 0]]), np.array([[0, 1]]), hoods)
    assert office_overlap_share(np.array([0.0, 3.0]), topo, city, 0.5) == 1.0
    assert office_overlap_share(np.array([3.0, 0.0]), topo, city, 0.5) == 0.0


# ---------------------------------------------------------------------------
# base-station sleeping

def test_power_formula():
    pm = PowerModelConfig()
    assert bs_power(pm.micro, 1.0) == pytest.approx(2 * (56 + 2.6 * 6.3))
    assert bs_power(pm.macro, 0.0) == pytest.approx(6 * 130)
    rho = np.linspace(0, 1, 11)
    diff = bs_power(pm.micro, rho) - bs_power(pm.micro, 0.0)
    np.testing.assert_allclose(diff, 2 * 2.6 * 6.3 * rho)


def test_all_idle_sleeps_everything():
    pm = PowerModelConfig(grid=(1, 1))
    r = sleep_decision(np.zeros(5), np.zeros(5, int), pm)
    assert r.asleep.all()
    assert r.power_strategy == pytest.approx(bs_power(pm.macro, 0.0))


def test_single_busy_cell_stays_awake():
    pm = PowerModelConfig(grid=(1, 1))
    r = sleep_decision(np.array([0.0, 10.0, 1.0]), np.zeros(3, int), pm)
    assert r.asleep.tolist() == [True, False, True]
    assert r.rho[1] == 1.0
    expect = bs_power(pm.micro, 1.0) + bs_power(pm.macro, 1.0 / (10 * 10.0))
    assert r.power_strategy == pytest.approx(expect)


def test_macro_capacity_limits_offload():
    pm = PowerModelConfig(grid=(1, 1), capacity_ratio=0.5)
    loads = np.array([3.0, 3.0, 10.0])
    r = sleep_decision(loads, np.zeros(3, int), pm)
    # capacity 5: only one of the two light cells fits
    assert r.asleep.sum() == 1 and not r.asleep[2]


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_strategy_never_costs_more(loads, seed):
    pm = PowerModelConfig(grid=(2, 2))
    macro = np.random.default_rng(seed).integers(0, 4, len(loads))
    r = sleep_decision(np.array(loads), macro, pm)
    assert r.power_strategy <= r.power_always_on + 1e-9


def test_hourly_loads_and_bs_sleeping():
    topo = build_topology([(1, 10, 10), (2, 90, 90)], 100, 100)
    recs = [_rec("a", 1, 100), _rec("b", 2, 3000, "call", 1200)]
    loads = hourly_loads(recs, topo, 7200)
    assert loads.tolist() == [[1, 1], [0, 1]]
    assert macro_of(topo, (2, 2)).tolist() == [0, 3]
    res = bs_sleeping(recs, topo, PowerModelConfig(), 7200)
    assert len(res) == 2 and all(r.power_strategy <= r.power_always_on for r in res)
