import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from cdrsynth.core import PipelineConfig
from cdrsynth.statmodel import (CALL_DURATION_DIST, IET_BIN_DISTS, OVERALL_IET_DIST,
                                FittedDist, VolumeEntry, VolumeProfileTable,
                                assign_volume_profiles, exponential, fit, fit_lognormal,
                                iet_class, ks_statistic, lognormal, sample_call_duration,
                                sample_data_volume, sample_iet, write_fits_csv,
                                write_fits_json)

# closed-form medians x0 + exp(mu), frozen
BIN1_MEDIAN = 0.99 + math.exp(4.04)  # 57.87
CALL_MEDIAN = -0.47 + math.exp(3.78)  # 43.35


def test_presets_match_fitted_table():
    assert IET_BIN_DISTS[0].params == {"sigma": 1.798, "mu": 4.04, "x0": 0.99}
    assert IET_BIN_DISTS[1].params == {"sigma": 1.731, "mu": 8.59, "x0": 1749.08}
    assert IET_BIN_DISTS[2].params == {"lam": 6.21e-06, "x0": 86401.0}
    assert CALL_DURATION_DIST.params == {"sigma": 1.29, "mu": 3.78, "x0": -0.47}
    assert OVERALL_IET_DIST.params == {"sigma": 2.67, "mu": 4.97, "x0": 1.0}


def test_cdf_against_scipy():
    x = np.linspace(-1, 5000, 200)
    d = IET_BIN_DISTS[0]
    ref = sps.lognorm(s=1.798, loc=0.99, scale=math.exp(4.04))
    np.testing.assert_allclose(d.cdf(x), ref.cdf(x), atol=1e-12)
    np.testing.assert_allclose(d.pdf(x), ref.pdf(x), atol=1e-12)
    e = IET_BIN_DISTS[2]
    xe = np.linspace(8e4, 1e6, 50)
    np.testing.assert_allclose(e.cdf(xe), sps.expon(loc=86401, scale=1 / 6.21e-6).cdf(xe),
                               atol=1e-12)


def test_ks_statistic_matches_scipy():
    rng = np.random.default_rng(3)
    x = rng.lognormal(1.0, 0.5, 2000) + 2.0
    d = lognormal(0.5, 1.0, 2.0)
    ref = sps.kstest(x, sps.lognorm(s=0.5, loc=2.0, scale=math.e).cdf).statistic
    assert ks_statistic(x, d) == pytest.approx(ref, abs=1e-12)


def test_bin1_untruncated_median():
    x = sample_iet(1, np.random.default_rng(0), size=10**6, truncate=False)
    assert abs(np.median(x) / BIN1_MEDIAN - 1) < 0.02


def test_truncated_draws_stay_in_bin():
    rng = np.random.default_rng(1)
    b1 = sample_iet(1, rng, size=10**5)
    b2 = sample_iet(2, rng, size=10**5)
    b3 = sample_iet(3, rng, size=10**5)
    assert np.all((b1 >= 0) & (b1 <= 1800))
    assert np.all((b2 > 1800) & (b2 <= 86400))
    assert np.all(b3 >= 86401)
    assert np.array_equal(iet_class(b1), np.zeros(len(b1)))
    assert np.array_equal(iet_class(b2), np.ones(len(b2)))


def test_sample_iet_median_of_n_and_bad_bin():
    rng = np.random.default_rng(2)
    x = sample_iet(1, rng, size=(4, 5), n=3)
    assert x.shape == (4, 5)
    assert isinstance(sample_iet(2, rng), float)
    with pytest.raises(ValueError):
        sample_iet(0, rng)


def test_call_duration_median_and_positive():
    x = sample_call_duration(np.random.default_rng(0), size=10**6)
    assert abs(np.median(x) / CALL_MEDIAN - 1) < 0.02
    assert np.all(x > 0)
    a = sample_call_duration(np.random.default_rng(5), size=10)
    assert np.array_equal(a, sample_call_duration(np.random.default_rng(5), size=10))


def test_lognormal_sampling_identity():
    rng = np.random.default_rng(4)
    x = IET_BIN_DISTS[0].sample(rng, 10**5)
    assert abs(np.mean(np.log(x - 0.99)) / 4.04 - 1) < 0.01


@pytest.mark.parametrize("dist", IET_BIN_DISTS, ids=["bin1", "bin2", "bin3"])
def test_fit_round_trip(dist):
    x = dist.sample(np.random.default_rng(11), 10**5)
    f = fit(x)
    assert f.family == dist.family
    for k in ("sigma", "mu", "lam"):
        if k in dist.params:
            assert abs(f.params[k] / dist.params[k] - 1) < 0.05


def test_fit_lognormal_against_scipy_mle():
    # independent route: scipy's generic MLE with the location fixed at ours
    x = lognormal(0.8, 2.0, 5.0).sample(np.random.default_rng(9), 20000)
    ours = fit_lognormal(x)
    s, loc, scale = sps.lognorm.fit(x, floc=ours.params["x0"])
    assert ours.params["sigma"] == pytest.approx(s, rel=1e-6)
    assert ours.params["mu"] == pytest.approx(math.log(scale), rel=1e-6)
    ll_ours = np.sum(sps.lognorm.logpdf(x, ours.params["sigma"], ours.params["x0"],
                                        math.exp(ours.params["mu"])))
    s2, loc2, scale2 = sps.lognorm.fit(x)
    ll_scipy = np.sum(sps.lognorm.logpdf(x, s2, loc2, scale2))
    assert ll_ours >= ll_scipy - 1e-3


def test_exponential_data_selects_exponential():
    x = exponential(0.01, 3.0).sample(np.random.default_rng(8), 20000)
    assert fit(x).family == "exponential"


def test_fit_errors():
    with pytest.raises(ValueError):
        fit(np.full(100, 4.0))
    with pytest.raises(ValueError):
        fit(np.arange(10.0))
    with pytest.raises(ValueError):
        FittedDist("lognormal", {"sigma": -1, "mu": 0, "x0": 0})


def test_fit_exports(tmp_path):
    fits = {"bin1": IET_BIN_DISTS[0], "bin3": IET_BIN_DISTS[2]}
    write_fits_csv(tmp_path / "f.csv", fits)
    write_fits_json(tmp_path / "f.json", fits)
    assert "lognormal" in (tmp_path / "f.csv").read_text()
    assert FittedDist.from_dict(IET_BIN_DISTS[2].to_dict()).params == IET_BIN_DISTS[2].params


def test_volume_point_mass_and_dayparts():
    point = VolumeEntry("point", 1e6)
    entries = {("light", "peak"): point, ("light", "offpeak"): VolumeEntry("point", 7.0)}
    table = VolumeProfileTable((1.0, 0.0, 0.0), entries, 8, 20)
    rng = np.random.default_rng(0)
    assert sample_data_volume("light", 9 * 3600, table, rng) == 10**6
    # 03:00 falls outside the 08-20 peak window
    assert sample_data_volume(0, 3 * 3600, table, rng) == 7
    with pytest.raises(KeyError):
        sample_data_volume("heavy", 0, table, rng)


def test_heavy_profile_uses_more_data():
    table = VolumeProfileTable.from_config(PipelineConfig())
    rng = np.random.default_rng(1)
    ts = np.full(10**5, 10 * 3600)
    light = sample_data_volume(np.zeros(10**5, int), ts, table, rng)
    heavy = sample_data_volume(np.full(10**5, 2), ts, table, rng)
    assert heavy.mean() > light.mean()
    assert light.min() >= 1


def test_volume_profile_shares():
    table = VolumeProfileTable.from_config(PipelineConfig())
    p = assign_volume_profiles(10**5, table, np.random.default_rng(2))
    np.testing.assert_allclose(np.bincount(p) / 10**5, (0.5, 0.35, 0.15), atol=0.01)


@given(st.floats(0.2, 3.0), st.floats(-2, 6), st.floats(-10, 1000))
@settings(max_examples=30, deadline=None)
def test_cdf_monotone_and_bounded(sigma, mu, x0):
    d = lognormal(sigma, mu, x0)
    x = np.linspace(x0 - 10, x0 + 1e5, 300)
    c = d.cdf(x)
    assert np.all(np.diff(c) >= 0) and c.min() >= 0 and c.max() <= 1
