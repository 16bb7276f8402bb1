"""Urban activity density maps and a micro base-station sleeping strategy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _window_mask(records, lo, hi, daily=True):
    """Records active in ``[lo, hi)`` (seconds of day when ``daily``). Calls
    count while ongoing, other events at their timestamp."""
    out = []
    for r in records:
        start = r.timestamp
        end = start + (r.call_duration or 0) if r.event_type == "call" else start + 1
        if daily:
            day = start // 86400
            s, e = start - day * 86400, end - day * 86400
            out.append(s < hi and e > lo)
        else:
            out.append(start < hi and end > lo)
    return np.asarray(out, dtype=bool)


def density_map(records, topology, hours=(8, 12)):
    """Events per cell within an hour-of-day window (all days), divided by the
    number of users active in that window. Aligned with
    ``topology.cell_ids``."""
    lo, hi = hours[0] * 3600, hours[1] * 3600
    mask = _window_mask(records, lo, hi)
    load = np.zeros(len(topology))
    pos = {int(c): i for i, c in enumerate(topology.cell_ids)}
    users = set()
    for r, m in zip(records, mask):
        if m:
            load[pos[r.cell_id]] += 1
            users.add(r.phone)
    return load / len(users) if users else load


def clip_polygon_to_rect(poly, rect):
    """Sutherland-Hodgman clipping of a polygon to an axis-aligned rectangle."""
    pts = [tuple(p) for p in poly]
    edges = [(0, rect.x0, 1), (0, rect.x1, -1), (1, rect.y0, 1), (1, rect.y1, -1)]
    for axis, val, sign in edges:
        if not pts:
            break
        inside = [sign * (p[axis] - val) >= 0 for p in pts]
        out = []
        for i, p in enumerate(pts):
            q = pts[i - 1]
            ip, iq = inside[i], inside[i - 1]
            if ip != iq:
                t = (val - q[axis]) / (p[axis] - q[axis])
                out.append((q[0] + t * (p[0] - q[0]), q[1] + t * (p[1] - q[1])))
            if ip:
                out.append(p)
        pts = out
    return np.array(pts)


def polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def top_cells(load, fraction=0.1):
    """Indices of the top ``fraction`` of cells by load (at least one)."""
    k = max(1, int(round(fraction * len(load))))
    return np.argsort(-load, kind="stable")[:k]


def office_overlap_share(load, topology, city, fraction=0.1):
    """Share of top-decile cells whose Voronoi polygon overlaps an office
    neighborhood with positive area."""
    polys = topology.polygons()
    offices = [city.neighborhoods[i].rect for i in city.of_kind("office")]
    top = top_cells(load, fraction)
    hits = 0
    for i in top:
        poly = polys.get(int(topology.cell_ids[i]))
        if poly is None:
            continue
        if any(polygon_area(clip_polygon_to_rect(poly, r)) > 0 for r in offices):
            hits += 1
    return hits / len(top)


# ---------------------------------------------------------------------------
# base-station sleeping

@dataclass(frozen=True)
class PowerModelConfig:
    micro: tuple = (2, 56.0, 6.3, 2.6)  # N_trx, P0, Pmax, delta_p
    macro: tuple = (6, 130.0, 20.0, 4.7)
    rho_min: float = 0.37
    grid: tuple = (5, 5)
    capacity_ratio: float = 10.0

    @classmethod
    def from_config(cfg_cls, cfg):
        return cfg_cls(tuple(cfg.micro_power), tuple(cfg.macro_power), cfg.rho_min,
                       tuple(cfg.macro_grid), cfg.macro_capacity_ratio)


def bs_power(constants, rho):
    """``N_trx * (P0 + delta_p * Pmax * rho)``."""
    n_trx, p0, pmax, dp = constants
    return n_trx * (p0 + dp * pmax * np.asarray(rho, dtype=float))


def macro_of(topology, grid):
    """Macro cell (row-major in a ``grid`` tessellation of the box) covering
    each micro station."""
    gx, gy = grid
    ix = np.minimum((topology.xy[:, 0] / topology.width * gx).astype(int), gx - 1)
    iy = np.minimum((topology.xy[:, 1] / topology.height * gy).astype(int), gy - 1)
    return iy * gx + ix


@dataclass
class SleepResult:
    rho: np.ndarray
    asleep: np.ndarray
    macro_rho: np.ndarray
    power_strategy: float
    power_always_on: float


def sleep_decision(loads, macro_idx, pm: PowerModelConfig):
    """Sleep lightly loaded micros (``rho <= rho_min``) while their covering
    macro has capacity; ``rho`` is the load over the window's maximum cell
    load and a macro can carry ``capacity_ratio`` times that maximum.
    Sleeping micros draw no power."""
    loads = np.asarray(loads, dtype=float)
    n_macro = pm.grid[0] * pm.grid[1]
    lmax = loads.max() if len(loads) else 0.0
    rho = loads / lmax if lmax > 0 else np.zeros_like(loads)
    asleep = np.zeros(len(loads), dtype=bool)
    macro_load = np.zeros(n_macro)
    capacity = pm.capacity_ratio * lmax
    for i in np.argsort(rho, kind="stable"):
        if rho[i] > pm.rho_min:
            break
        m = macro_idx[i]
        if capacity > 0 and macro_load[m] + loads[i] > capacity:
            continue
        asleep[i] = True
        macro_load[m] += loads[i]
    macro_rho = macro_load / capacity if capacity > 0 else np.zeros(n_macro)
    micro_p = bs_power(pm.micro, rho)
    strategy = float(micro_p[~asleep].sum() + bs_power(pm.macro, macro_rho).sum())
    always = float(micro_p.sum() + bs_power(pm.macro, np.zeros(n_macro)).sum())
    return SleepResult(rho, asleep, macro_rho, strategy, always)


def hourly_loads(records, topology, duration_s):
    """``(n_hours, n_cells)`` count of records active in each hour of the
    trace (calls while ongoing)."""
    n_h = int(np.ceil(duration_s / 3600))
    pos = {int(c): i for i, c in enumerate(topology.cell_ids)}
    out = np.zeros((n_h, len(topology)))
    for r in records:
        start = r.timestamp
        end = start + r.call_duration if r.event_type == "call" else start + 1
        c = pos[r.cell_id]
        for h in range(start // 3600, min((end - 1) // 3600, n_h - 1) + 1):
            out[h, c] += 1
    return out


def bs_sleeping(records, topology, pm: PowerModelConfig, duration_s):
    """Sleep decisions and power per hourly window of the trace."""
    macro_idx = macro_of(topology, pm.grid)
    return [sleep_decision(row, macro_idx, pm) for row in hourly_loads(records, topology,
                                                                        duration_s)]
