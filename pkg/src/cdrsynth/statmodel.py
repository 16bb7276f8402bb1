"""Distribution fitting and the metric samplers (IETs, call durations, data volumes).

Lognormal distributions are three-parameter: shape ``sigma``, log-scale ``mu``
and location ``x0``, so that ``x = x0 + exp(mu + sigma * Z)`` with ``Z``
standard normal. Exponentials carry a rate ``lam`` and location ``x0``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

#: IET bin upper edges in seconds: [0, 30 min], (30 min, 24 h], > 24 h
IET_BIN_EDGES = (1800.0, 86400.0)
N_IET_BINS = 3


@dataclass(frozen=True)
class FittedDist:
    family: str
    params: dict
    ks_statistic: float = float("nan")

    def __post_init__(self):
        if self.family == "lognormal":
            if not self.params["sigma"] > 0:
                raise ValueError("lognormal sigma must be positive")
        elif self.family == "exponential":
            if not self.params["lam"] > 0:
                raise ValueError("exponential rate must be positive")
        else:
            raise ValueError(f"unsupported family {self.family!r}")

    @property
    def x0(self):
        return self.params["x0"]

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        p = self.params
        if self.family == "lognormal":
            ok = x > p["x0"]
            z = x[ok] - p["x0"]
            out[ok] = np.exp(-(np.log(z) - p["mu"]) ** 2 / (2 * p["sigma"] ** 2)) / (
                z * p["sigma"] * math.sqrt(2 * math.pi))
        else:
            ok = x >= p["x0"]
            out[ok] = p["lam"] * np.exp(-p["lam"] * (x[ok] - p["x0"]))
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        p = self.params
        if self.family == "lognormal":
            ok = x > p["x0"]
            out[ok] = special.ndtr((np.log(x[ok] - p["x0"]) - p["mu"]) / p["sigma"])
        else:
            ok = x >= p["x0"]
            out[ok] = -np.expm1(-p["lam"] * (x[ok] - p["x0"]))
        return out

    def median(self):
        p = self.params
        if self.family == "lognormal":
            return p["x0"] + math.exp(p["mu"])
        return p["x0"] + math.log(2.0) / p["lam"]

    def sample(self, rng, size=None):
        p = self.params
        if self.family == "lognormal":
            return p["x0"] + np.exp(p["mu"] + p["sigma"] * rng.standard_normal(size))
        return p["x0"] + rng.exponential(1.0 / p["lam"], size)

    def to_dict(self):
        return {"family": self.family, **self.params, "ks_statistic": self.ks_statistic}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        family = d.pop("family")
        ks = d.pop("ks_statistic", float("nan"))
        return cls(family, {k: float(v) for k, v in d.items()}, float(ks))


def lognormal(sigma, mu, x0):
    return FittedDist("lognormal", {"sigma": sigma, "mu": mu, "x0": x0})


def exponential(lam, x0):
    return FittedDist("exponential", {"lam": lam, "x0": x0})


# fitted IET distributions per bin (reference CdRs)
IET_BIN_DISTS = (
    lognormal(1.798, 4.04, 0.99),
    lognormal(1.731, 8.59, 1749.08),
    exponential(6.21e-06, 86401.0),
)
CALL_DURATION_DIST = lognormal(1.29, 3.78, -0.47)
#: single lognormal fitted to all IETs, used by the "Overall sampling" baseline
OVERALL_IET_DIST = lognormal(2.67, 4.97, 1.0)


# ---------------------------------------------------------------------------
# fitting

def ks_statistic(samples, dist: FittedDist) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    cdf = dist.cdf(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def _lognormal_profile(x, logdelta, xmin):
    y = np.log(x - (xmin - math.exp(logdelta)))
    mu = y.mean()
    var = y.var()
    if var <= 0:
        return -np.inf, mu, 0.0
    n = len(x)
    ll = -0.5 * n * math.log(var) - y.sum() - 0.5 * n * (1 + math.log(2 * math.pi))
    return ll, mu, math.sqrt(var)


def fit_lognormal(samples) -> FittedDist:
    """Three-parameter lognormal MLE by profiling the likelihood over ``x0``.

    For a fixed location the MLE of ``(mu, sigma)`` is closed-form, so only a
    one-dimensional search over ``log(min(x) - x0)`` remains: a coarse grid
    followed by a bounded Brent refinement around the best grid point.
    """
    x = np.asarray(samples, dtype=float)
    xmin = x.min()
    scale = max(np.median(x) - xmin, np.std(x), 1e-12)
    lo, hi = math.log(scale * 1e-9), math.log(scale * 1e4)
    grid = np.linspace(lo, hi, 161)
    lls = np.array([_lognormal_profile(x, g, xmin)[0] for g in grid])
    k = int(np.nanargmax(lls))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(lambda g: -_lognormal_profile(x, g, xmin)[0],
                                   bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-8})
    best = res.x if -res.fun >= lls[k] else grid[k]
    _, mu, sigma = _lognormal_profile(x, best, xmin)
    return lognormal(sigma, mu, xmin - math.exp(best))


def fit_exponential(samples) -> FittedDist:
    x = np.asarray(samples, dtype=float)
    x0 = float(x.min())
    return exponential(1.0 / float(np.mean(x - x0)), x0)


_FITTERS = {"lognormal": fit_lognormal, "exponential": fit_exponential}


def fit(samples, candidate_families=("lognormal", "exponential")) -> FittedDist:
    """Fit every candidate family by maximum likelihood and keep the one with
    the smallest Kolmogorov-Smirnov statistic.

    Raises
    ------
    ValueError
        With fewer than 50 samples or zero sample variance.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 50:
        raise ValueError(f"need at least 50 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    if np.ptp(x) == 0:
        raise ValueError("degenerate samples (zero variance)")
    best = None
    for fam in candidate_families:
        d = _FITTERS[fam](x)
        d = FittedDist(d.family, d.params, ks_statistic(x, d))
        if best is None or d.ks_statistic < best.ks_statistic:
            best = d
    return best


def write_fits_csv(path, fits: dict):
    """One row per named fit: ``name,family,sigma,mu,lam,x0,ks_statistic``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "family", "sigma", "mu", "lam", "x0", "ks_statistic"])
        for name, d in fits.items():
            p = d.params
            w.writerow([name, d.family, p.get("sigma", ""), p.get("mu", ""), p.get("lam", ""),
                        p["x0"], d.ks_statistic])


def write_fits_json(path, fits: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: v.to_dict() for k, v in fits.items()}, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# IET sampling

def iet_class(iet_seconds):
    """Bin index 0, 1 or 2 of each inter-event time."""
    iet = np.asarray(iet_seconds, dtype=float)
    return np.searchsorted(np.asarray(IET_BIN_EDGES), iet, side="left").astype(np.int64)


def _bin_bounds(b):
    lo = 0.0 if b == 0 else IET_BIN_EDGES[b - 1]
    hi = IET_BIN_EDGES[b] if b < len(IET_BIN_EDGES) else np.inf
    return lo, hi


def _in_bin(x, b):
    lo, hi = _bin_bounds(b)
    if b == 0:
        return (x >= lo) & (x <= hi)
    return (x > lo) & (x <= hi)


def _truncated_draw(dist, b, rng, size, max_retries=100):
    x = np.atleast_1d(dist.sample(rng, size))
    bad = ~_in_bin(x, b)
    retries = 0
    while bad.any() and retries < max_retries:
        x[bad] = dist.sample(rng, int(bad.sum()))
        bad = ~_in_bin(x, b)
        retries += 1
    if bad.any():
        lo, hi = _bin_bounds(b)
        low_side = bad & (x <= lo)
        x[low_side] = lo if b == 0 else np.nextafter(lo, np.inf)
        x[bad & (x > hi)] = hi
    return x


def sample_iet(bin, rng, size=None, n=1, truncate=True, dists=IET_BIN_DISTS):
    """Draw inter-event times (seconds) for IET bin ``bin`` in {1, 2, 3}.

    With ``truncate`` the draws are kept inside the bin interval by rejection
    (at most 100 redraws, then clamped to the boundary). For ``n > 1`` each
    returned value is the median of ``n`` draws.
    """
    if bin not in (1, 2, 3):
        raise ValueError(f"IET bin must be 1, 2 or 3, got {bin}")
    b = bin - 1
    dist = dists[b]
    count = 1 if size is None else int(np.prod(size))
    total = count * n
    if truncate:
        x = _truncated_draw(dist, b, rng, total)
    else:
        x = np.atleast_1d(dist.sample(rng, total))
    if n > 1:
        x = np.median(x.reshape(count, n), axis=1)
    if size is None:
        return float(x[0])
    return x.reshape(size)


def sample_iet_classes(classes, rng, n=1, dists=IET_BIN_DISTS):
    """Vectorised truncated IET draws for an array of 0-based bin classes."""
    classes = np.asarray(classes)
    out = np.empty(classes.shape, dtype=float)
    for b in range(N_IET_BINS):
        sel = classes == b
        k = int(sel.sum())
        if k:
            out[sel] = sample_iet(b + 1, rng, size=k, n=n, dists=dists)
    return out


def sample_call_duration(rng, size=None, dist=CALL_DURATION_DIST):
    """Call durations in seconds; non-positive draws are redrawn."""
    count = 1 if size is None else int(np.prod(size))
    x = np.atleast_1d(dist.sample(rng, count))
    bad = x <= 0
    while bad.any():
        x[bad] = dist.sample(rng, int(bad.sum()))
        bad = x <= 0
    if size is None:
        return float(x[0])
    return x.reshape(size)


# ---------------------------------------------------------------------------
# data volume

PROFILES = ("light", "medium", "heavy")


@dataclass(frozen=True)
class VolumeEntry:
    kind: str  # "lognormal" (median, sigma) or "point" (value)
    value: float
    sigma: float = 0.0

    def sample(self, rng, size):
        if self.kind == "point":
            return np.full(size, float(self.value))
        if self.kind == "lognormal":
            return self.value * np.exp(self.sigma * rng.standard_normal(size))
        raise ValueError(f"unknown volume entry kind {self.kind!r}")

    def mean(self):
        if self.kind == "point":
            return float(self.value)
        return self.value * math.exp(self.sigma ** 2 / 2)


@dataclass(frozen=True)
class VolumeProfileTable:
    """Data-session volume distributions per (profile, daypart).

    All users carry the occasional frequency profile, so only the volume
    profile (light / medium / heavy) and the peak/off-peak daypart select an
    entry. Dayparts are ``"peak"`` for hours in ``[peak_start_h, peak_end_h)``.
    """

    shares: tuple = (0.5, 0.35, 0.15)
    entries: dict = field(default_factory=dict)
    peak_start_h: int = 8
    peak_end_h: int = 20

    @classmethod
    def from_config(cls, cfg):
        entries = {}
        for i, prof in enumerate(PROFILES):
            entries[(prof, "peak")] = VolumeEntry("lognormal", cfg.volume_peak_median[i],
                                                  cfg.volume_sigma[i])
            entries[(prof, "offpeak")] = VolumeEntry("lognormal", cfg.volume_offpeak_median[i],
                                                     cfg.volume_sigma[i])
        return cls(tuple(cfg.volume_shares), entries, cfg.peak_start_h, cfg.peak_end_h)

    def daypart(self, timestamp):
        hour = (np.asarray(timestamp) % 86400) // 3600
        return np.where((hour >= self.peak_start_h) & (hour < self.peak_end_h), "peak", "offpeak")


def assign_volume_profiles(n_users, table: VolumeProfileTable, rng):
    """Volume profile index (0 light, 1 medium, 2 heavy) per user."""
    return rng.choice(len(PROFILES), size=n_users, p=np.asarray(table.shares))


def sample_data_volume(profile, timestamp, table: VolumeProfileTable, rng):
    """Session volume in bytes (at least 1) for each (profile, timestamp).

    ``profile`` may be a name or index; scalars return an ``int``.
    """
    scalar = np.ndim(timestamp) == 0 and np.ndim(profile) == 0
    prof = np.atleast_1d(profile)
    ts = np.atleast_1d(np.asarray(timestamp))
    prof, ts = np.broadcast_arrays(prof, ts)
    names = np.array([PROFILES[p] if not isinstance(p, str) else p for p in prof.tolist()],
                     dtype=object)
    parts = table.daypart(ts)
    out = np.empty(ts.shape, dtype=float)
    for key in sorted(set(zip(names.tolist(), parts.tolist()))):
        if key not in table.entries:
            raise KeyError(f"volume table has no entry for {key}")
        sel = (names == key[0]) & (parts == key[1])
        out[sel] = table.entries[key].sample(rng, int(sel.sum()))
    out = np.maximum(np.rint(out), 1).astype(np.int64)
    return int(out[0]) if scalar else out
