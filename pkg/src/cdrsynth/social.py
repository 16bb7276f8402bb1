"""Phone identities, mobility-derived relationships and the social graph.

Every local user owns a phonebook split into four disjoint categories:
``inter`` (foreign numbers, outgoing and incoming international calls),
``out`` (the user calls/texts them), ``in`` (they call/text the user) and
``both``. Local categories are built by stub matching so that
``v in out(u)  <=>  u in in(v)`` and ``v in both(u)  <=>  u in both(v)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import PHONEBOOK_HEADER, iter_csv_rows, random_imei
from .refdata import CATEGORIES

log = logging.getLogger(__name__)

RELATIONS = ("friend", "colleague", "neighbor", "other")
RANK_WEIGHTS = {"friend": 1.0, "colleague": 1 / 2, "neighbor": 1 / 3, "other": 1 / 4}
MAX_PER_OPERATOR = 100_000


@dataclass(frozen=True)
class PhoneIdentity:
    user_id: int
    phone: str
    imei: str
    operator: int


def assign_identities(n_users, operators, rng):
    """``operators``: list of ``(mcc, mnc, share)``. Operators are drawn per
    user; the five subscriber digits are drawn without replacement."""
    shares = np.array([s for _, _, s in operators], dtype=float)
    if abs(shares.sum() - 1) > 1e-9:
        raise ValueError(f"operator shares sum to {shares.sum():.6g}")
    op = rng.choice(len(operators), size=n_users, p=shares)
    out = [None] * n_users
    for k, (mcc, mnc, _) in enumerate(operators):
        users = np.flatnonzero(op == k)
        if len(users) > MAX_PER_OPERATOR:
            raise ValueError(f"operator {mcc}-{mnc}: {len(users)} users exceed the "
                             f"{MAX_PER_OPERATOR} available 5-digit numbers")
        digits = rng.choice(MAX_PER_OPERATOR, size=len(users), replace=False)
        for u, d in zip(users, digits):
            out[u] = PhoneIdentity(int(u), f"{mcc}{mnc}{int(d):05d}", random_imei(rng), k)
    return out


@dataclass
class RelationshipSets:
    neighbors: dict
    colleagues: dict
    friends: dict

    def of(self, relation, u):
        table = {"friend": self.friends, "colleague": self.colleagues,
                 "neighbor": self.neighbors}[relation]
        return table.get(u, set())

    def label(self, u, v):
        for rel in ("friend", "colleague", "neighbor"):
            if v in self.of(rel, u):
                return rel
        return "other"


def _majority_cluster(xy, rects):
    """Index of the rectangle holding most of the samples of each user, -1
    when none of them falls in any rectangle."""
    n = xy.shape[0]
    counts = np.zeros((n, len(rects)), dtype=np.int64)
    for j, r in enumerate(rects):
        inside = ((xy[..., 0] >= r.x0) & (xy[..., 0] <= r.x1)
                  & (xy[..., 1] >= r.y0) & (xy[..., 1] <= r.y1))
        counts[:, j] = inside.sum(axis=1)
    best = np.argmax(counts, axis=1)
    best[counts.max(axis=1) == 0] = -1
    return best


def _group_sets(labels, user_ids):
    out = {int(u): set() for u in user_ids}
    for lab in np.unique(labels[labels >= 0]):
        members = [int(u) for u in user_ids[labels == lab]]
        s = set(members)
        for m in members:
            out[m] = s - {m}
    return out


def mine_relationships(trajectories, city, evenings=()) -> RelationshipSets:
    """Neighbors share the home cluster they occupy most between 01 h and
    04 h, colleagues the office cluster they occupy most between 10 h and
    14 h; friends took part in the same evening activity."""
    hod = (trajectories.times % 86400) // 3600
    uids = trajectories.user_ids
    homes = [city.neighborhoods[i].rect for i in city.of_kind("home")]
    offices = [city.neighborhoods[i].rect for i in city.of_kind("office")]
    night = (hod >= 1) & (hod < 4)
    work = (hod >= 10) & (hod < 14)
    neighbors = _group_sets(_majority_cluster(trajectories.xy[:, night], homes), uids)
    colleagues = _group_sets(_majority_cluster(trajectories.xy[:, work], offices), uids)
    friends = {int(u): set() for u in uids}
    for e in evenings:
        for m in e.participants:
            friends.setdefault(m, set()).update(p for p in e.participants if p != m)
    return RelationshipSets(neighbors, colleagues, friends)


# ---------------------------------------------------------------------------
# degrees

DEGREE_COLUMNS = ("total",) + CATEGORIES  # total, inter, out, in, both


def sample_degrees(stats, n_users, rng, balance=True):
    """Per-user ``(#c, #inter, #out, #in, #both)``.

    ``#c`` follows the reference distribution, the split is multinomial with
    the reference category means. With ``balance`` the sequence is made
    matchable (see :func:`balance_degrees`).
    """
    p = np.asarray(stats.corr_count_dist, dtype=float)
    total = rng.choice(np.arange(1, len(p) + 1), size=n_users, p=p / p.sum())
    means = np.asarray(stats.category_means, dtype=float)
    parts = np.array([rng.multinomial(int(c), means / means.sum()) for c in total])
    deg = np.column_stack([total, parts]).astype(np.int64)
    return balance_degrees(deg, rng) if balance else deg


def balance_degrees(deg, rng):
    """Make ``sum(#out) == sum(#in)`` and ``sum(#both)`` even.

    Surplus outgoing (incoming) slots are turned into incoming (outgoing) ones
    on random users, which keeps every user's total; a remaining odd
    difference or an odd ``#both`` sum is fixed by removing one slot from a
    random user. Every change is logged.
    """
    deg = deg.copy()
    OUT, IN, BOTH = 2, 3, 4
    diff = int(deg[:, OUT].sum() - deg[:, IN].sum())
    src, dst = (OUT, IN) if diff > 0 else (IN, OUT)
    flips = abs(diff) // 2
    if flips:
        slots = np.repeat(np.arange(len(deg)), deg[:, src])
        for u in rng.choice(slots, size=flips, replace=False):
            deg[u, src] -= 1
            deg[u, dst] += 1
        log.info("converted %d %s slots to %s to balance the degree sums", flips,
                 CATEGORIES[src - 1], CATEGORIES[dst - 1])
    if abs(diff) % 2:
        cands = np.flatnonzero(deg[:, src] > 0)
        u = int(rng.choice(cands))
        deg[u, src] -= 1
        deg[u, 0] -= 1
        log.info("removed one %s slot of user %d (odd difference)", CATEGORIES[src - 1], u)
    if deg[:, BOTH].sum() % 2:
        u = int(rng.choice(np.flatnonzero(deg[:, BOTH] > 0)))
        deg[u, BOTH] -= 1
        deg[u, 0] -= 1
        log.info("removed one 'both' slot of user %d (odd sum)", u)
    return deg


# ---------------------------------------------------------------------------
# graph

@dataclass
class Phonebook:
    user_id: int
    phone: str
    inter: list = field(default_factory=list)
    out: list = field(default_factory=list)
    inc: list = field(default_factory=list)
    both: list = field(default_factory=list)
    ranks: dict = field(default_factory=dict)  # correspondent phone -> friendship rank
    relation: dict = field(default_factory=dict)  # correspondent phone -> relation label

    def category(self, name):
        return {"inter": self.inter, "out": self.out, "in": self.inc, "both": self.both}[name]

    @property
    def n_correspondents(self):
        return len(self.inter) + len(self.out) + len(self.inc) + len(self.both)

    def counts(self):
        return (self.n_correspondents, len(self.inter), len(self.out), len(self.inc),
                len(self.both))

    def by_rank(self):
        """Correspondent phones ordered by ascending rank."""
        return sorted(self.ranks, key=self.ranks.get)


@dataclass
class SocialGraph:
    phonebooks: list
    identities: list
    dropped_stubs: int = 0

    def __post_init__(self):
        self.user_of = {i.phone: i.user_id for i in self.identities}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(PHONEBOOK_HEADER)
            for pb in self.phonebooks:
                for cat in CATEGORIES:
                    for c in pb.category(cat):
                        w.writerow([pb.phone, cat, c, pb.ranks[c]])


def read_phonebooks_csv(path, identities):
    by_phone = {i.phone: i.user_id for i in identities}
    books = {i.user_id: Phonebook(i.user_id, i.phone) for i in identities}
    for lineno, row in iter_csv_rows(path, PHONEBOOK_HEADER):
        try:
            pb = books[by_phone[row[0]]]
            pb.category(row[1]).append(row[2])
            pb.ranks[row[2]] = int(row[3])
        except (KeyError, ValueError, IndexError):
            raise ValueError(f"{path}: malformed row at line {lineno}") from None
    return SocialGraph([books[i.user_id] for i in identities], list(identities))


def _pair(u, v):
    return (u, v) if u < v else (v, u)


def _preferred_partner(u, rel, probs, free, used, rng, cache):
    """Partner for one stub of ``u``: the user of the drawn relation class with
    the most free stubs (ties at random), else any user with a free stub. -1
    when nobody is available."""
    choice = RELATIONS[int(rng.choice(4, p=probs))]
    if choice != "other":
        key = (choice, u)
        if key not in cache:
            cache[key] = np.fromiter(rel.of(choice, u), dtype=np.int64)
        cands = cache[key]
        if len(cands):
            ok = [int(w) for w in cands
                  if w != u and free[w] > 0 and _pair(u, int(w)) not in used]
            if ok:
                # the candidate with most free stubs keeps the others matchable
                f = np.array([free[w] for w in ok])
                best = np.flatnonzero(f == f.max())
                return ok[int(best[rng.integers(len(best))])]
    return _random_partner(u, free, used, rng)


def _match_category(src_counts, dst_counts, rel, labels, probs, used, rng, directed,
                    max_attempts):
    """Preferential stub matching for one category, then edge-swap repair of
    the leftovers.

    Undirected categories pass the same counts twice. Returns the edges
    (``(u, v)`` meaning v is in u's out list, or an unordered pair) and the
    number of stubs that could not be placed.
    """
    n = len(src_counts)
    src = np.asarray(src_counts, dtype=np.int64).copy()
    dst = np.asarray(dst_counts, dtype=np.int64).copy() if directed else src
    edges = []
    cache = {}

    def add(u, v):
        used.add(_pair(u, v))
        edges.append((u, v))
        labels[_pair(u, v)] = rel.label(u, v)

    for u in rng.permutation(np.repeat(np.arange(n), src)):
        u = int(u)
        if src[u] <= 0:
            continue
        src[u] -= 1  # hold this stub while searching, so u never pairs with itself
        v = _preferred_partner(u, rel, probs, dst, used, rng, cache)
        src[u] += 1
        if v < 0:
            continue
        src[u] -= 1
        dst[v] -= 1
        add(u, v)

    left_src = list(rng.permutation(np.repeat(np.arange(n), src)))
    if directed:
        left_dst = list(rng.permutation(np.repeat(np.arange(n), dst)))
    else:
        left_dst = left_src[1::2]
        left_src = left_src[0::2]
    dropped = abs(len(left_src) - len(left_dst))
    for u, v in zip(left_src, left_dst):
        u, v = int(u), int(v)
        if u != v and _pair(u, v) not in used:
            add(u, v)
            continue
        placed = False
        for _ in range(max_attempts if edges else 0):
            k = int(rng.integers(len(edges)))
            a, b = edges[k]
            if not directed and rng.random() < 0.5:
                a, b = b, a
            # a-b becomes u-b and a-v: every degree is preserved, u and v gain one
            p1, p2 = _pair(u, b), _pair(a, v)
            if u == b or a == v or p1 == p2 or p1 in used or p2 in used:
                continue
            used.discard(_pair(a, b))
            labels.pop(_pair(a, b), None)
            edges[k] = edges[-1]
            edges.pop()
            add(u, b)
            add(a, v)
            placed = True
            break
        if not placed:
            dropped += 2 if not directed else 1
    return edges, dropped


def _random_partner(u, free, used, rng, tries=50):
    """A user with a free stub, drawn proportionally to free stubs."""
    total = free.sum() - (free[u] if free[u] > 0 else 0)
    if total <= 0:
        return -1
    for _ in range(tries):
        w = _draw_weighted(free, rng)
        if w != u and (min(u, w), max(u, w)) not in used:
            return w
    return -1


def _draw_weighted(free, rng):
    pos = np.maximum(free, 0)
    c = np.cumsum(pos)
    return int(np.searchsorted(c, rng.random() * c[-1], side="right"))


def build_graph(degrees, identities, relationships: RelationshipSets, selection_probs, rng,
                foreign_mccs=(208, 262, 234, 310, 250, 222), max_rewire_attempts=200):
    """Phonebooks realising the requested degrees as closely as possible.

    For every stub a relation class is drawn from ``selection_probs`` (friend,
    colleague, neighbor, other); the partner is a user of that class with a
    free matching stub, else any user with one. Self-loops and repeated pairs
    are never created: such leftovers are repaired with edge swaps and, failing
    that, dropped (the count is logged and stored on the graph).
    """
    degrees = np.asarray(degrees, dtype=np.int64)
    n = len(degrees)
    probs = np.asarray(selection_probs, dtype=float)
    probs = probs / probs.sum()
    used = set()
    labels = {}
    both_edges, d_both = _match_category(degrees[:, 4], degrees[:, 4], relationships, labels,
                                         probs, used, rng, False, max_rewire_attempts)
    dir_edges, d_dir = _match_category(degrees[:, 2], degrees[:, 3], relationships, labels,
                                       probs, used, rng, True, max_rewire_attempts)
    dropped = d_both + d_dir
    if dropped:
        log.warning("%d stubs could not be matched and were dropped", dropped)
    books = [Phonebook(i.user_id, i.phone) for i in identities]
    phone = [i.phone for i in identities]
    for u, v in both_edges:
        books[u].both.append(phone[v])
        books[v].both.append(phone[u])
        lab = labels.get(_pair(u, v), "other")
        books[u].relation[phone[v]] = lab
        books[v].relation[phone[u]] = lab
    for u, v in dir_edges:
        books[u].out.append(phone[v])
        books[v].inc.append(phone[u])
        lab = labels.get(_pair(u, v), "other")
        books[u].relation[phone[v]] = lab
        books[v].relation[phone[u]] = lab
    local = set(phone)
    seen = set()
    for u in range(n):
        for _ in range(int(degrees[u, 1])):
            while True:
                num = (f"{int(rng.choice(foreign_mccs))}{int(rng.integers(0, 100)):02d}"
                       f"{int(rng.integers(0, 10 ** 7)):07d}")
                if num not in seen and num not in local:
                    break
            seen.add(num)
            books[u].inter.append(num)
            books[u].relation[num] = "other"
    for pb in books:
        assign_ranks(pb, rng)
    return SocialGraph(books, list(identities), dropped)


def assign_ranks(pb: Phonebook, rng):
    """Weighted random order of the phonebook (friends before colleagues
    before neighbors before others, in expectation). The first in that order
    is the most interactive correspondent and receives the highest rank."""
    phones = pb.inter + pb.out + pb.inc + pb.both
    if not phones:
        pb.ranks = {}
        return
    w = np.array([RANK_WEIGHTS[pb.relation.get(p, "other")] for p in phones])
    keys = rng.random(len(phones)) ** (1.0 / w)
    order = np.argsort(-keys, kind="stable")
    k = len(phones)
    pb.ranks = {phones[j]: k - pos for pos, j in enumerate(order)}


def check_reciprocity(graph: SocialGraph):
    """List of violated reciprocity/disjointness conditions (empty when the
    graph is consistent)."""
    problems = []
    books = {pb.phone: pb for pb in graph.phonebooks}
    for pb in graph.phonebooks:
        cats = [set(pb.inter), set(pb.out), set(pb.inc), set(pb.both)]
        if sum(len(c) for c in cats) != len(set().union(*cats)):
            problems.append((pb.phone, "categories overlap"))
        if any(len(c) != len(lst) for c, lst in
               zip(cats, (pb.inter, pb.out, pb.inc, pb.both))):
            problems.append((pb.phone, "duplicate correspondent"))
        if pb.phone in set().union(*cats):
            problems.append((pb.phone, "self loop"))
        for v in pb.out:
            if v not in books or pb.phone not in books[v].inc:
                problems.append((pb.phone, f"out {v} not mirrored"))
        for v in pb.inc:
            if v not in books or pb.phone not in books[v].out:
                problems.append((pb.phone, f"in {v} not mirrored"))
        for v in pb.both:
            if v not in books or pb.phone not in books[v].both:
                problems.append((pb.phone, f"both {v} not mirrored"))
        for v in pb.inter:
            if v in books:
                problems.append((pb.phone, f"international {v} is a local user"))
    return problems
