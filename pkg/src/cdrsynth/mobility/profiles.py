"""Mobility profiles and home/office placement."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

EXPLORATION = ("scouter", "regular", "routiner")
DISTANCE_CLASSES = ("P1", "P2", "P3")


@dataclass(frozen=True)
class MobilityProfile:
    exploration: str
    distance_class: str
    owns_car: bool
    p_night: float


@dataclass
class Agent:
    user_id: int
    profile: MobilityProfile
    home_nb: int = -1
    office_nb: int = -1
    home: np.ndarray = None
    office: np.ndarray = None
    group: int = -1
    familiar_spot: int = -1


@dataclass
class ProfileAssignment:
    exploration: np.ndarray  # indices into EXPLORATION
    distance: np.ndarray  # indices into DISTANCE_CLASSES
    owns_car: np.ndarray

    def counts(self):
        return (np.bincount(self.exploration, minlength=3),
                np.bincount(self.distance, minlength=3))


def assign_profiles(n_users, shares, rng, distance_shares=(0.72, 0.19, 0.09),
                    prob_own_car=0.19) -> ProfileAssignment:
    """Independent categorical draws per user for the exploration profile and
    the distance class, plus a Bernoulli car ownership flag."""
    shares = np.asarray(shares, dtype=float)
    if abs(shares.sum() - 1) > 1e-9:
        raise ValueError(f"exploration shares sum to {shares.sum():.6g}")
    expl = rng.choice(3, size=n_users, p=shares)
    dist = rng.choice(3, size=n_users, p=np.asarray(distance_shares, dtype=float))
    car = rng.random(n_users) < prob_own_car
    return ProfileAssignment(expl, dist, car)


def make_agents(assignment: ProfileAssignment, p_night=(0.8, 0.5, 0.2)):
    return [Agent(u, MobilityProfile(EXPLORATION[e], DISTANCE_CLASSES[d], bool(c), p_night[e]))
            for u, (e, d, c) in enumerate(zip(assignment.exploration, assignment.distance,
                                              assignment.owns_car))]


def _draw(rng, city, kind, subset):
    idx, p = city.popularity(kind, subset)
    return idx[int(rng.choice(len(idx), p=p))]


def assign_places(agents, city, rng):
    """Pick home and office neighborhoods by popularity and exact points
    uniformly inside them.

    P1 agents work in the area they live in, P2 agents in a different area,
    P3 agents anywhere. When the constraint cannot be met (no office in the
    area, a single area) the office is drawn without it and a warning is
    logged.
    """
    homes = city.of_kind("home")
    offices = city.of_kind("office")
    if not homes or not offices:
        raise ValueError("map needs at least one home and one office neighborhood")
    leisure = city.of_kind("leisure")
    relaxed = 0
    for a in agents:
        a.home_nb = _draw(rng, city, "home", homes)
        area = city.neighborhoods[a.home_nb].area
        cls = a.profile.distance_class
        if cls == "P1":
            allowed = [i for i in offices if city.neighborhoods[i].area == area]
        elif cls == "P2":
            allowed = [i for i in offices if city.neighborhoods[i].area != area]
        else:
            allowed = offices
        if not allowed:
            allowed = offices
            relaxed += 1
        a.office_nb = _draw(rng, city, "office", allowed)
        a.home = city.neighborhoods[a.home_nb].rect.sample(rng)
        a.office = city.neighborhoods[a.office_nb].rect.sample(rng)
        if leisure:
            c = city.neighborhoods[a.home_nb].rect.centroid
            d = [np.linalg.norm(city.neighborhoods[i].rect.centroid - c) for i in leisure]
            a.familiar_spot = leisure[int(np.argmin(d))]
    if relaxed:
        log.warning("%d agents placed without their distance-class constraint", relaxed)
    return agents


def form_groups(agents, rng, min_size=1, max_size=5):
    """Friends groups among agents sharing a home neighborhood and an
    exploration profile; sizes uniform in ``[min_size, max_size]``.
    Returns the list of member lists and sets ``agent.group``."""
    buckets = {}
    for a in agents:
        buckets.setdefault((a.home_nb, a.profile.exploration), []).append(a.user_id)
    groups = []
    for key in sorted(buckets):
        members = list(rng.permutation(buckets[key]))
        while members:
            k = int(rng.integers(min_size, max_size + 1))
            groups.append([int(m) for m in members[:k]])
            members = members[k:]
    by_id = {a.user_id: a for a in agents}
    for g, members in enumerate(groups):
        for m in members:
            by_id[m].group = g
    return groups
