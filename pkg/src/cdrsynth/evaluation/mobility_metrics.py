"""Mobility-law metrics on sampled trajectories and cell sequences."""
from __future__ import annotations

import csv

import numpy as np
from scipy.spatial import cKDTree


def ecdf(values):
    """``(x, F(x))`` with ``x`` sorted; F ends at 1."""
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, len(x) + 1) / max(len(x), 1)


def ccdf(values):
    """``(x, P(X >= x))`` over the distinct sorted values (non-increasing)."""
    x = np.sort(np.asarray(values, dtype=float))
    if not len(x):
        return x, x
    uniq, first = np.unique(x, return_index=True)
    return uniq, 1.0 - first / len(x)


def radius_of_gyration(xy):
    """Root mean squared distance from each user's centroid, ``(N,)``."""
    xy = np.asarray(xy, dtype=float)
    c = xy.mean(axis=1, keepdims=True)
    return np.sqrt(((xy - c) ** 2).sum(axis=2).mean(axis=1))


def return_probability(cells, times, ref_times=None):
    """Fraction of users found in the cell they occupied at a reference time,
    as a function of the elapsed time, averaged over reference times (default:
    every hour of the first day). Returns ``(lags_s, prob)``."""
    cells = np.asarray(cells)
    times = np.asarray(times)
    step = int(times[1] - times[0]) if len(times) > 1 else 1
    if ref_times is None:
        ref_times = np.arange(0, min(86400, times[-1] + 1), 3600)
    refs = np.unique(np.searchsorted(times, ref_times))
    refs = refs[refs < len(times)]
    L = len(times) - refs.max()
    acc = np.zeros(L)
    for r in refs:
        acc += (cells[:, r:r + L] == cells[:, r:r + 1]).mean(axis=0)
    return np.arange(L) * step, acc / len(refs)


def peak_near(lags, prob, center, search=6 * 3600, tol=1800):
    """True if the largest value within ``center +- search`` lies within
    ``tol`` seconds of ``center`` (a local maximum at that lag)."""
    sel = (lags >= center - search) & (lags <= center + search)
    if not sel.any():
        return False
    at = lags[sel][int(np.argmax(prob[sel]))]
    return abs(at - center) <= tol


def contact_events(xy, times, radius):
    """Scan every sample for pairs closer than ``radius``.

    Returns ``(starts, inter_contact)``: start times of contacts and the
    gaps between the end of one contact and the start of the next one of the
    same pair.
    """
    if xy.shape[0] < 2:
        raise ValueError("contact metrics need at least two users")
    active = {}
    last_end = {}
    starts = []
    gaps = []
    prev = set()
    for k, t in enumerate(times):
        now = cKDTree(np.asarray(xy[:, k], dtype=float)).query_pairs(radius)
        for p in now - prev:
            starts.append(t)
            if p in last_end:
                gaps.append(t - last_end[p])
            active[p] = t
        for p in prev - now:
            last_end[p] = t
            active.pop(p, None)
        prev = now
    return np.asarray(starts, dtype=np.int64), np.asarray(gaps, dtype=np.int64)


def contacts_per_hour(starts):
    """Contact starts per hour of day, normalised by the busiest hour."""
    hours = (np.asarray(starts, dtype=np.int64) % 86400) // 3600
    counts = np.bincount(hours, minlength=24).astype(float)
    return counts / counts.max() if counts.max() > 0 else counts


def repetitiveness(cells, top_k=(1, 2, 3)):
    """For each user, the share of visits (runs of consecutive samples in a
    cell) that go to the user's ``k`` most visited cells. ``{k: (N,)}``."""
    cells = np.asarray(cells)
    out = {k: np.zeros(len(cells)) for k in top_k}
    for i, row in enumerate(cells):
        runs = row[np.r_[True, row[1:] != row[:-1]]]
        _, counts = np.unique(runs, return_counts=True)
        counts = np.sort(counts)[::-1]
        for k in top_k:
            out[k][i] = counts[:k].sum() / counts.sum()
    return out


def mobility_metrics(trajectories, cells, contact_radius=10.0):
    """All metric tables, each a dict of equally long columns."""
    xy = trajectories.xy
    times = trajectories.times
    starts, gaps = contact_events(xy, times, contact_radius)
    tables = {}
    x, y = ccdf(gaps)
    tables["inter_contact_ccdf"] = {"seconds": x, "ccdf": y}
    tables["contacts_per_hour"] = {"hour": np.arange(24), "normalized": contacts_per_hour(starts)}
    x, y = ecdf(radius_of_gyration(xy))
    tables["radius_of_gyration_cdf"] = {"metres": x, "cdf": y}
    lags, prob = return_probability(cells, times)
    tables["return_probability"] = {"seconds": lags, "probability": prob}
    rep = repetitiveness(cells)
    for k, v in rep.items():
        x, y = ecdf(v)
        tables[f"repetitiveness_top{k}_cdf"] = {"fraction": x, "cdf": y}
    return tables


def write_table_csv(path, table):
    keys = list(table)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*(table[k] for k in keys)):
            w.writerow([f"{v:.6g}" if isinstance(v, (float, np.floating)) else v for v in row])
