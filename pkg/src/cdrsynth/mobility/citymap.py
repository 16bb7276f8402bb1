"""Road network, typed neighborhoods, areas and bus lines of the emulated city.

Coordinates are metres in a local frame with the origin at the south-west
corner of the bounding box; :class:`~cdrsynth.core.Projection` converts to
latitude/longitude for file output.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from ..core import Projection

KINDS = ("home", "office", "leisure")


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def centroid(self):
        return np.array([(self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2])

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    def contains(self, xy):
        xy = np.asarray(xy)
        return ((xy[..., 0] >= self.x0) & (xy[..., 0] <= self.x1)
                & (xy[..., 1] >= self.y0) & (xy[..., 1] <= self.y1))

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        pts = np.column_stack([rng.uniform(self.x0, self.x1, n), rng.uniform(self.y0, self.y1, n)])
        return pts[0] if size is None else pts

    def clip(self, xy):
        return np.clip(xy, [self.x0, self.y0], [self.x1, self.y1])

    def intersects(self, other: "Rect"):
        return not (self.x1 < other.x0 or other.x1 < self.x0
                    or self.y1 < other.y0 or other.y1 < self.y0)

    def polygon(self):
        return [(self.x0, self.y0), (self.x1, self.y0), (self.x1, self.y1), (self.x0, self.y1)]


@dataclass
class Neighborhood:
    kind: str
    rect: Rect
    popularity: float
    area: int = -1


@dataclass
class BusRoute:
    """One direction of a bus line: road nodes in travel order, with stops on a
    subset of them."""

    nodes: np.ndarray
    stops: np.ndarray  # indices into ``nodes``
    period_s: float
    dwell_s: float
    offset_s: float = 0.0


@dataclass
class CityMap:
    width: float
    height: float
    nodes: np.ndarray  # (N, 2) metres
    edges: np.ndarray  # (E, 2) node indices
    neighborhoods: list
    areas: list = field(default_factory=list)
    bus_routes: list = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        d = np.linalg.norm(self.nodes[self.edges[:, 0]] - self.nodes[self.edges[:, 1]], axis=1)
        self.lengths = d
        n = len(self.nodes)
        g = coo_matrix((np.r_[d, d], (np.r_[self.edges[:, 0], self.edges[:, 1]],
                                      np.r_[self.edges[:, 1], self.edges[:, 0]])), shape=(n, n))
        self.graph = g.tocsr()
        self._tree = cKDTree(self.nodes)
        self._sp = {}
        if not self.areas:
            self.areas = [Rect(0, 0, self.width, self.height)]

    @property
    def bbox(self):
        return Rect(0.0, 0.0, self.width, self.height)

    @property
    def diagonal(self):
        return float(np.hypot(self.width, self.height))

    def is_connected(self):
        n, _ = connected_components(self.graph, directed=False)
        return n == 1

    def of_kind(self, kind):
        return [i for i, nb in enumerate(self.neighborhoods) if nb.kind == kind]

    def popularity(self, kind, subset=None):
        idx = self.of_kind(kind) if subset is None else list(subset)
        w = np.array([self.neighborhoods[i].popularity for i in idx], dtype=float)
        return idx, w / w.sum()

    def nearest_node(self, xy):
        return int(self._tree.query(np.asarray(xy, dtype=float))[1])

    def _from(self, src):
        if src not in self._sp:
            dist, pred = dijkstra(self.graph, directed=False, indices=src,
                                  return_predecessors=True)
            self._sp[src] = (dist, pred)
        return self._sp[src]

    def road_distance(self, a, b):
        return float(self._from(a)[0][b])

    def shortest_path(self, a, b):
        """Node sequence of a shortest road path from ``a`` to ``b``."""
        dist, pred = self._from(a)
        if not np.isfinite(dist[b]):
            raise ValueError(f"node {b} unreachable from node {a}")
        path = [b]
        while path[-1] != a:
            path.append(int(pred[path[-1]]))
        return path[::-1]

    def area_of(self, xy):
        for i, a in enumerate(self.areas):
            if a.contains(xy):
                return i
        return -1


def synthetic_city(cfg, rng) -> CityMap:
    """Jittered grid road network with clustered neighborhoods.

    The box is split into ``cfg.n_areas`` vertical bands; home and office
    neighborhoods are dealt to the bands in turn, leisure spots are spread over
    the whole map. Popularity weights are lognormal, normalised per type.
    """
    W, H = cfg.world_width, cfg.world_height
    s = cfg.road_spacing
    xs = np.linspace(0, W, int(round(W / s)) + 1)
    ys = np.linspace(0, H, int(round(H / s)) + 1)
    nx, ny = len(xs), len(ys)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    interior = ((nodes[:, 0] > 0) & (nodes[:, 0] < W) & (nodes[:, 1] > 0) & (nodes[:, 1] < H))
    jitter = rng.uniform(-cfg.road_jitter, cfg.road_jitter, size=nodes.shape)
    nodes[interior] += jitter[interior]
    idx = np.arange(nx * ny).reshape(ny, nx)
    edges = np.vstack([np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()]),
                       np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])])

    band = W / cfg.n_areas
    areas = [Rect(i * band, 0.0, (i + 1) * band, H) for i in range(cfg.n_areas)]

    def place(kind, count, size, in_areas):
        out = []
        w, h = size
        for k in range(count):
            box = areas[k % len(areas)] if in_areas else Rect(0, 0, W, H)
            x0 = rng.uniform(box.x0, max(box.x1 - w, box.x0))
            y0 = rng.uniform(box.y0, max(box.y1 - h, box.y0))
            out.append(Neighborhood(kind, Rect(x0, y0, min(x0 + w, W), min(y0 + h, H)),
                                    float(rng.lognormal(0.0, 0.6)),
                                    k % len(areas) if in_areas else -1))
        total = sum(nb.popularity for nb in out)
        for nb in out:
            nb.popularity /= total
        return out

    hoods = (place("home", cfg.n_home_neighborhoods, cfg.home_cluster_size, True)
             + place("office", cfg.n_office_neighborhoods, cfg.office_cluster_size, True)
             + place("leisure", cfg.n_leisure_spots, cfg.leisure_spot_size, False))
    for nb in hoods:
        if nb.area < 0:
            nb.area = int(min(nb.rect.centroid[0] // band, cfg.n_areas - 1))

    routes = []
    for k in range(cfg.n_bus_lines):
        if k % 2 == 0:
            line = idx[int(rng.integers(1, ny - 1)), :]
        else:
            line = idx[:, int(rng.integers(1, nx - 1))]
        stops = np.arange(0, len(line), cfg.bus_stop_every)
        if stops[-1] != len(line) - 1:
            stops = np.append(stops, len(line) - 1)
        offset = float(rng.uniform(0, cfg.bus_period_s))
        routes.append(BusRoute(line.copy(), stops, cfg.bus_period_s, cfg.bus_dwell_s, offset))
        routes.append(BusRoute(line[::-1].copy(), (len(line) - 1 - stops)[::-1],
                               cfg.bus_period_s, cfg.bus_dwell_s, offset))
    return CityMap(W, H, nodes, edges, hoods, areas, routes)


# ---------------------------------------------------------------------------
# plain-CSV map files

def write_map_csv(path, city: CityMap, projection: Projection):
    """Nodes as ``node_id,lat,lon`` rows followed by ``edge,node_a,node_b`` rows."""
    lat, lon = projection.to_latlon(city.nodes[:, 0], city.nodes[:, 1])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "lat", "lon"])
        for i in range(len(city.nodes)):
            w.writerow([i, f"{lat[i]:.7f}", f"{lon[i]:.7f}"])
        for a, b in city.edges:
            w.writerow(["edge", int(a), int(b)])


def write_neighborhoods_csv(path, city: CityMap, projection: Projection):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "lat0", "lon0", "lat1", "lon1", "popularity", "area"])
        for nb in city.neighborhoods:
            la0, lo0 = projection.to_latlon(nb.rect.x0, nb.rect.y0)
            la1, lo1 = projection.to_latlon(nb.rect.x1, nb.rect.y1)
            w.writerow([nb.kind, f"{la0:.7f}", f"{lo0:.7f}", f"{la1:.7f}", f"{lo1:.7f}",
                        repr(nb.popularity), nb.area])


def load_city(map_path, neighborhoods_path, projection: Projection, width, height,
              n_areas=3) -> CityMap:
    """Read a road graph and neighborhoods written by the functions above (or
    by hand). Popularity weights are renormalised per type."""
    nodes = {}
    edges = []
    with open(map_path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [h.strip() for h in header[:3]] != ["node_id", "lat", "lon"]:
            raise ValueError(f"{map_path}: expected header node_id,lat,lon")
        for lineno, row in enumerate(r, start=2):
            try:
                if row[0].strip() == "edge":
                    edges.append((int(row[1]), int(row[2])))
                else:
                    nodes[int(row[0])] = (float(row[1]), float(row[2]))
            except (ValueError, IndexError):
                raise ValueError(f"{map_path}: malformed row at line {lineno}") from None
    ids = sorted(nodes)
    pos = {nid: i for i, nid in enumerate(ids)}
    lat = np.array([nodes[i][0] for i in ids])
    lon = np.array([nodes[i][1] for i in ids])
    x, y = projection.to_xy(lat, lon)
    e = np.array([(pos[a], pos[b]) for a, b in edges], dtype=np.int64)
    hoods = []
    with open(neighborhoods_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            x0, y0 = projection.to_xy(float(row["lat0"]), float(row["lon0"]))
            x1, y1 = projection.to_xy(float(row["lat1"]), float(row["lon1"]))
            hoods.append(Neighborhood(row["kind"], Rect(min(x0, x1), min(y0, y1),
                                                        max(x0, x1), max(y0, y1)),
                                      float(row["popularity"]), int(row.get("area", -1) or -1)))
    for kind in KINDS:
        members = [nb for nb in hoods if nb.kind == kind]
        total = sum(nb.popularity for nb in members)
        for nb in members:
            nb.popularity /= total
    band = width / n_areas
    areas = [Rect(i * band, 0.0, (i + 1) * band, height) for i in range(n_areas)]
    for nb in hoods:
        if nb.area < 0:
            nb.area = int(min(nb.rect.centroid[0] // band, n_areas - 1))
    return CityMap(width, height, np.column_stack([x, y]), e, hoods, areas, [])
