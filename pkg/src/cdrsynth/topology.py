"""Voronoi cell partition over base stations, realised as exact nearest-station
queries, and mapping of trajectories to cell ids."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .core import CELL_HEADER, STATION_HEADER, Projection, iter_csv_rows

log = logging.getLogger(__name__)

_CANDIDATES = 8


@dataclass
class CellTopology:
    """Stations in metres with a k-d tree. Equal distances resolve to the
    lowest cell id."""

    cell_ids: np.ndarray
    xy: np.ndarray
    width: float
    height: float

    def __post_init__(self):
        order = np.argsort(self.cell_ids, kind="stable")
        self.cell_ids = np.asarray(self.cell_ids, dtype=np.int64)[order]
        self.xy = np.asarray(self.xy, dtype=float)[order]
        self._tree = cKDTree(self.xy)

    def __len__(self):
        return len(self.cell_ids)

    def clamp(self, pts):
        return np.clip(np.asarray(pts, dtype=float), [0.0, 0.0], [self.width, self.height])

    def nearest_index(self, pts):
        """Index (into ``cell_ids``) of the station serving each point."""
        pts = self.clamp(pts)
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, 2)
        k = min(_CANDIDATES, len(self))
        _, idx = self._tree.query(flat, k=k)
        idx = idx.reshape(len(flat), k)
        d2 = ((self.xy[idx] - flat[:, None, :]) ** 2).sum(axis=2)
        best = d2.min(axis=1, keepdims=True)
        # candidates are sorted by index which follows cell id order
        tie = np.where(d2 <= best, idx, np.iinfo(np.int64).max)
        out = tie.min(axis=1)
        # a tie may involve a station outside the k candidates only when the
        # k-th candidate is itself at the best distance
        edge = d2[:, -1] <= best[:, 0]
        if edge.any() and k < len(self):
            for j in np.flatnonzero(edge):
                full = ((self.xy - flat[j]) ** 2).sum(axis=1)
                out[j] = int(np.flatnonzero(full <= full.min())[0])
        return out.reshape(shape)

    def cell_of(self, pts):
        return self.cell_ids[self.nearest_index(pts)]

    def adjacency(self):
        """Pairs of cell ids whose Voronoi regions share an edge."""
        if len(self) < 3:
            return {(int(a), int(b)) for a in self.cell_ids for b in self.cell_ids if a < b}
        vor = Voronoi(self.xy)
        return {tuple(sorted((int(self.cell_ids[a]), int(self.cell_ids[b]))))
                for a, b in vor.ridge_points}

    def polygons(self):
        """Voronoi polygons clipped to the bounding box, keyed by cell id.

        The stations are mirrored across the four box edges so that every
        original region is bounded and lies inside the box.
        """
        W, H = self.width, self.height
        p = self.xy
        mirrored = np.vstack([p, np.c_[-p[:, 0], p[:, 1]], np.c_[2 * W - p[:, 0], p[:, 1]],
                              np.c_[p[:, 0], -p[:, 1]], np.c_[p[:, 0], 2 * H - p[:, 1]]])
        vor = Voronoi(mirrored)
        out = {}
        for i, cid in enumerate(self.cell_ids):
            region = vor.regions[vor.point_region[i]]
            if not region or -1 in region:
                continue
            poly = vor.vertices[region]
            c = poly.mean(axis=0)
            ang = np.arctan2(poly[:, 1] - c[1], poly[:, 0] - c[0])
            out[int(cid)] = np.clip(poly[np.argsort(ang)], [0, 0], [W, H])
        return out

    def write_geojson(self, path, projection: Projection):
        feats = []
        for cid, poly in self.polygons().items():
            lat, lon = projection.to_latlon(poly[:, 0], poly[:, 1])
            ring = [[float(a), float(b)] for a, b in zip(lon, lat)]
            ring.append(ring[0])
            feats.append({"type": "Feature", "properties": {"cell_id": cid},
                          "geometry": {"type": "Polygon", "coordinates": [ring]}})
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"type": "FeatureCollection", "features": feats}, fh)

    def write_csv(self, path, projection: Projection):
        lat, lon = projection.to_latlon(self.xy[:, 0], self.xy[:, 1])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(STATION_HEADER)
            for cid, a, b in zip(self.cell_ids, lat, lon):
                w.writerow([int(cid), f"{a:.8f}", f"{b:.8f}"])


def build_topology(stations, width, height) -> CellTopology:
    """``stations``: iterable of ``(cell_id, x, y)`` in metres. Stations at
    an already used position are dropped (the lower id is kept)."""
    st = sorted((int(c), float(x), float(y)) for c, x, y in stations)
    if not st:
        raise ValueError("topology needs at least one station")
    ids = [s[0] for s in st]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate cell ids")
    seen = set()
    keep = []
    for c, x, y in st:
        if (x, y) in seen:
            log.warning("station %d duplicates a position and is dropped", c)
            continue
        seen.add((x, y))
        keep.append((c, x, y))
    arr = np.array(keep, dtype=float)
    return CellTopology(arr[:, 0].astype(np.int64), arr[:, 1:], width, height)


def read_stations_csv(path, projection: Projection):
    """``cell_id,lat,lon[,mcc,mnc]``; operator columns are ignored."""
    out = []
    for lineno, row in iter_csv_rows(path, STATION_HEADER):
        try:
            x, y = projection.to_xy(float(row[1]), float(row[2]))
            out.append((int(row[0]), float(x), float(y)))
        except (ValueError, IndexError):
            raise ValueError(f"{path}: malformed row at line {lineno}") from None
    return out


def synthetic_stations(cfg, rng, city=None):
    """Jittered grid of about ``cfg.n_stations`` sites plus one site at the
    centre of every neighborhood (denser coverage where people are)."""
    W, H = cfg.world_width, cfg.world_height
    n_extra = len(city.neighborhoods) if city is not None else 0
    n_grid = max(cfg.n_stations - n_extra, 1)
    nx = max(int(round(np.sqrt(n_grid * W / H))), 1)
    ny = max(int(np.ceil(n_grid / nx)), 1)
    gx = (np.arange(nx) + 0.5) * W / nx
    gy = (np.arange(ny) + 0.5) * H / ny
    pts = np.array([(x, y) for y in gy for x in gx])[:n_grid]
    pts += rng.uniform(-0.2, 0.2, pts.shape) * [W / nx, H / ny]
    if city is not None:
        pts = np.vstack([pts, [nb.rect.centroid for nb in city.neighborhoods]])
    pts = np.clip(pts, 0, [W, H])
    return [(i + 1, float(x), float(y)) for i, (x, y) in enumerate(pts)]


def map_positions(trajectories, topology: CellTopology):
    """Cell id of every trajectory sample, shape ``(N, T)``."""
    return topology.cell_of(trajectories.xy.astype(float))


def write_cells_csv(path, trajectories, cells):
    """``timestamp,user_id,cell_id`` sorted by (timestamp, user_id)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CELL_HEADER) + "\n")
        uids = trajectories.user_ids
        for k, t in enumerate(trajectories.times):
            block = np.column_stack([np.full(len(uids), t), uids, cells[:, k]])
            np.savetxt(fh, block, fmt="%d", delimiter=",")


def read_cells_csv(path):
    rows = np.array([r for _, r in iter_csv_rows(path, CELL_HEADER)], dtype=np.int64)
    if not len(rows):
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 0), np.int64)
    times = np.unique(rows[:, 0])
    uids = np.unique(rows[:, 1])
    cells = np.full((len(uids), len(times)), -1, dtype=np.int64)
    cells[np.searchsorted(uids, rows[:, 1]), np.searchsorted(times, rows[:, 0])] = rows[:, 2]
    return times, uids, cells
