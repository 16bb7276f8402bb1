"""Working-day mobility: home, commute, office, optional evening with the
friends group, and back home, every simulated day.

Each agent's day is built as a list of timestamped keypoints (positions at
which speed or direction changes); positions are then sampled on a fixed
time grid by linear interpolation, so movement between keypoints happens at
constant, mode-specific speed.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import DAY, MOBILITY_HEADER, Projection, iter_csv_rows
from .citymap import CityMap, Rect
from .profiles import (Agent, assign_places, assign_profiles, form_groups, make_agents)

log = logging.getLogger(__name__)

AT_HOME, COMMUTING, AT_OFFICE, EVENING = "AtHome", "Commuting", "AtOffice", "EveningActivity"


@dataclass
class Trajectories:
    """Positions of ``N`` users on a common time grid (metres)."""

    times: np.ndarray  # (T,) int64
    xy: np.ndarray  # (N, T, 2) float32
    user_ids: np.ndarray

    @property
    def n_users(self):
        return self.xy.shape[0]

    def index_at(self, t):
        """Grid index of the latest sample at or before ``t`` (first sample if
        ``t`` precedes the grid)."""
        return np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)

    def write_csv(self, path, projection: Projection):
        """``timestamp,user_id,lat,lon`` rows sorted by (timestamp, user_id)."""
        lat, lon = projection.to_latlon(self.xy[..., 0].astype(float), self.xy[..., 1].astype(float))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(MOBILITY_HEADER) + "\n")
            uids = self.user_ids
            for k, t in enumerate(self.times):
                block = np.column_stack([np.full(len(uids), t), uids, lat[:, k], lon[:, k]])
                np.savetxt(fh, block, fmt=("%d", "%d", "%.7f", "%.7f"), delimiter=",")

    @classmethod
    def read_csv(cls, path, projection: Projection):
        rows = [r for _, r in iter_csv_rows(path, MOBILITY_HEADER)]
        if not rows:
            return cls(np.zeros(0, np.int64), np.zeros((0, 0, 2), np.float32), np.zeros(0, int))
        arr = np.array(rows, dtype=float)
        times = np.unique(arr[:, 0]).astype(np.int64)
        uids = np.unique(arr[:, 1]).astype(np.int64)
        ti = np.searchsorted(times, arr[:, 0].astype(np.int64))
        ui = np.searchsorted(uids, arr[:, 1].astype(np.int64))
        x, y = projection.to_xy(arr[:, 2], arr[:, 3])
        xy = np.full((len(uids), len(times), 2), np.nan, dtype=np.float32)
        xy[ui, ti, 0] = x
        xy[ui, ti, 1] = y
        return cls(times, xy, uids)


@dataclass(frozen=True)
class EveningEvent:
    day: int
    group: int
    spot: int  # neighborhood index
    point: tuple
    start: float
    end: float
    participants: tuple


@dataclass
class MobilityRun:
    city: CityMap
    agents: list
    groups: list
    trajectories: Trajectories
    evenings: list = field(default_factory=list)
    states: dict = field(default_factory=dict)  # user -> [(t, state)]


# ---------------------------------------------------------------------------
# trip planning

class Planner:
    """Shortest-path trips on foot, by car, or on foot plus one bus line."""

    def __init__(self, city: CityMap, cfg):
        self.city = city
        self.walk = cfg.walk_speed
        self.car = cfg.car_speed
        self.bus = cfg.bus_speed
        self._routes = []
        for r in city.bus_routes:
            pts = city.nodes[r.nodes]
            cum = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
            is_stop = np.zeros(len(r.nodes), bool)
            is_stop[r.stops] = True
            stops_before = np.r_[0, np.cumsum(is_stop)[:-1]]
            offs = cum / self.bus + r.dwell_s * stops_before
            self._routes.append((r, pts, offs))

    def _path_points(self, a_xy, b_xy, na=None, nb=None):
        c = self.city
        na = c.nearest_node(a_xy) if na is None else na
        nb = c.nearest_node(b_xy) if nb is None else nb
        nodes = c.shortest_path(na, nb)
        return np.vstack([a_xy, c.nodes[nodes], b_xy])

    @staticmethod
    def _length(pts):
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def plan(self, a_xy, b_xy, owns_car):
        """List of legs: ``("move", points, speed)`` or ``("bus", route, ia, ib)``."""
        a_xy = np.asarray(a_xy, float)
        b_xy = np.asarray(b_xy, float)
        path = self._path_points(a_xy, b_xy)
        if owns_car:
            return [("move", path, self.car)]
        walk_t = self._length(path) / self.walk
        best = None
        c = self.city
        na, nb = c.nearest_node(a_xy), c.nearest_node(b_xy)
        da = c._from(na)[0]
        db = c._from(nb)[0]
        for k, (r, pts, offs) in enumerate(self._routes):
            stop_nodes = r.nodes[r.stops]
            ia = int(np.argmin(da[stop_nodes]))
            ib = int(np.argmin(db[stop_nodes]))
            if ib <= ia:
                continue
            ja, jb = r.stops[ia], r.stops[ib]
            est = ((da[stop_nodes[ia]] + db[stop_nodes[ib]]) / self.walk
                   + r.period_s / 2 + offs[jb] - offs[ja])
            if best is None or est < best[0]:
                best = (est, k, ja, jb)
        if best is None or best[0] >= walk_t:
            return [("move", path, self.walk)]
        _, k, ja, jb = best
        r = self._routes[k][0]
        stop_a = c.nodes[r.nodes[ja]]
        stop_b = c.nodes[r.nodes[jb]]
        return [("move", self._path_points(a_xy, stop_a, na, r.nodes[ja]), self.walk),
                ("bus", k, ja, jb),
                ("move", self._path_points(stop_b, b_xy, r.nodes[jb], nb), self.walk)]

    def estimate(self, legs):
        t = 0.0
        for leg in legs:
            if leg[0] == "move":
                t += self._length(leg[1]) / leg[2]
            else:
                r, _, offs = self._routes[leg[1]]
                t += r.period_s / 2 + offs[leg[3]] - offs[leg[2]]
        return t

    def realize(self, legs, t0, track):
        """Append the trip's keypoints to ``track`` starting at ``t0``;
        returns the arrival time."""
        t = t0
        for leg in legs:
            if leg[0] == "move":
                pts, speed = leg[1], leg[2]
                seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
                for p, d in zip(pts[1:], seg):
                    if d <= 0:
                        continue
                    t += d / speed
                    track.add(t, p)
            else:
                r, pts, offs = self._routes[leg[1]]
                ja, jb = leg[2], leg[3]
                k = math.ceil((t - r.offset_s - offs[ja]) / r.period_s)
                dep = r.offset_s + k * r.period_s
                is_stop = np.zeros(len(r.nodes), bool)
                is_stop[r.stops] = True
                t = dep + offs[ja]
                track.add(t, pts[ja])
                for j in range(ja, jb):
                    if is_stop[j]:
                        t = dep + offs[j] + r.dwell_s
                        track.add(t, pts[j])
                    t = dep + offs[j + 1]
                    track.add(t, pts[j + 1])
        return t


class Track:
    """Keypoint accumulator for one agent."""

    def __init__(self, t0, xy):
        self.t = [float(t0)]
        self.p = [np.asarray(xy, float)]

    @property
    def pos(self):
        return self.p[-1]

    @property
    def now(self):
        return self.t[-1]

    def add(self, t, xy):
        xy = np.asarray(xy, float)
        if t <= self.t[-1]:
            if np.allclose(xy, self.p[-1]):
                return
            raise ValueError(f"keypoint at {t} does not advance past {self.t[-1]}")
        self.t.append(float(t))
        self.p.append(xy)

    def stay_until(self, t):
        if t > self.t[-1]:
            self.add(t, self.p[-1])


# ---------------------------------------------------------------------------

def _office_box(city, agent, size):
    rect = city.neighborhoods[agent.office_nb].rect
    h = size / 2
    x0, y0 = rect.clip(agent.office - h)
    x1, y1 = rect.clip(agent.office + h)
    return Rect(x0, y0, x1, y1)


def _choose_spot(city, agent, rng):
    leisure, p = city.popularity("leisure")
    expl = agent.profile.exploration
    familiar = expl == "routiner" or (expl == "regular" and rng.random() < 0.5)
    if familiar and agent.familiar_spot >= 0:
        return agent.familiar_spot
    return leisure[int(rng.choice(len(leisure), p=p))]


def simulate(agents, city: CityMap, duration_s, rng, cfg, groups=None) -> MobilityRun:
    """Run the daily cycle for every agent over ``duration_s`` seconds.

    ``agents`` must already have homes and offices; friends groups are formed
    here when ``groups`` is not given.
    """
    if duration_s < DAY:
        raise ValueError("mobility simulation needs at least one day")
    if not city.is_connected():
        raise ValueError("road graph is not connected; some destinations are unreachable")
    if groups is None:
        groups = form_groups(agents, rng, cfg.min_group_size, cfg.max_group_size)
    planner = Planner(city, cfg)
    by_id = {a.user_id: a for a in agents}
    tracks = {a.user_id: Track(0.0, a.home) for a in agents}
    states = {a.user_id: [(0.0, AT_HOME)] for a in agents}
    start_mean = {a.user_id: cfg.office_start_s + cfg.office_start_sd_s * rng.standard_normal()
                  for a in agents}
    commute = {}
    evenings = []
    n_days = int(math.ceil(duration_s / DAY))
    for day in range(n_days):
        base = day * DAY
        leave = {}
        for a in agents:
            tr = tracks[a.user_id]
            if a.user_id not in commute:
                commute[a.user_id] = planner.plan(a.home, a.office, a.profile.owns_car)
            legs = commute[a.user_id]
            target = base + start_mean[a.user_id] + cfg.office_jitter_sd_s * rng.standard_normal()
            depart = max(target - planner.estimate(legs), tr.now + 60.0)
            tr.stay_until(depart)
            states[a.user_id].append((depart, COMMUTING))
            arrive = planner.realize(legs, depart, tr)
            states[a.user_id].append((arrive, AT_OFFICE))
            end = arrive + cfg.workday_s
            box = _office_box(city, a, cfg.office_size)
            n_moves = int(rng.poisson(cfg.office_moves_per_day))
            for tm in np.sort(rng.uniform(arrive, end - 600.0, n_moves)):
                if tm <= tr.now:
                    continue
                tr.stay_until(tm)
                dst = box.sample(rng)
                tr.add(tm + max(np.linalg.norm(dst - tr.pos), 1e-3) / cfg.walk_speed, dst)
            tr.stay_until(end)
            leave[a.user_id] = tr.now
        going = {a.user_id: rng.random() < a.profile.p_night for a in agents}
        out_tonight = set()
        for g, members in enumerate(groups):
            part = [m for m in members if going[m]]
            if not part:
                continue
            spot = _choose_spot(city, by_id[part[0]], rng)
            point = city.neighborhoods[spot].rect.sample(rng)
            arrivals = []
            for m in part:
                tr = tracks[m]
                states[m].append((tr.now, COMMUTING))
                legs = planner.plan(tr.pos, point, by_id[m].profile.owns_car)
                arrivals.append(planner.realize(legs, tr.now, tr))
            start = max(arrivals)
            end = start + rng.uniform(cfg.min_evening_s, cfg.max_evening_s)
            for m, t_arr in zip(part, arrivals):
                states[m].append((t_arr, EVENING))
                tracks[m].stay_until(end)
                out_tonight.add(m)
            evenings.append(EveningEvent(day, g, spot, (float(point[0]), float(point[1])),
                                         float(start), float(end), tuple(part)))
        for a in agents:
            tr = tracks[a.user_id]
            states[a.user_id].append((tr.now, COMMUTING))
            legs = planner.plan(tr.pos, a.home, a.profile.owns_car)
            home_t = planner.realize(legs, tr.now, tr)
            states[a.user_id].append((home_t, AT_HOME))
    times = np.arange(0, duration_s, cfg.sample_interval_s, dtype=np.int64)
    xy = np.empty((len(agents), len(times), 2), dtype=np.float32)
    for i, a in enumerate(agents):
        tr = tracks[a.user_id]
        kt = np.asarray(tr.t)
        kp = np.asarray(tr.p)
        xy[i, :, 0] = np.interp(times, kt, kp[:, 0])
        xy[i, :, 1] = np.interp(times, kt, kp[:, 1])
    states = {u: [(t, s) for t, s in v if t < duration_s] for u, v in states.items()}
    traj = Trajectories(times, xy, np.array([a.user_id for a in agents], dtype=np.int64))
    return MobilityRun(city, agents, groups, traj, evenings, states)


def run_mobility(cfg, rng, city=None) -> MobilityRun:
    """Profiles, places, groups and simulation in one call."""
    from .citymap import synthetic_city

    if city is None:
        city = synthetic_city(cfg, rng)
    assignment = assign_profiles(cfg.n_users, cfg.exploration_shares, rng,
                                 cfg.distance_shares, cfg.prob_own_car)
    agents = assign_places(make_agents(assignment, cfg.p_night), city, rng)
    return simulate(agents, city, cfg.duration_s, rng, cfg)


def write_evenings_csv(path, evenings):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "group", "spot", "x", "y", "start", "end", "participants"])
        for e in evenings:
            w.writerow([e.day, e.group, e.spot, f"{e.point[0]:.3f}", f"{e.point[1]:.3f}",
                        f"{e.start:.3f}", f"{e.end:.3f}", " ".join(map(str, e.participants))])


def read_evenings_csv(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(EveningEvent(int(row["day"]), int(row["group"]), int(row["spot"]),
                                    (float(row["x"]), float(row["y"])), float(row["start"]),
                                    float(row["end"]),
                                    tuple(int(p) for p in row["participants"].split())))
    return out
