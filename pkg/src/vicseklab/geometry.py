"""Exact geometry of self-similar diagonal cable systems.

A cable system of generation ``n`` is a metric tree embedded in the integer
lattice ``Z^N``.  Its building block is a "cross": a centre vertex joined by
``2^N`` unit-length cables to the corners ``centre + delta`` with
``delta in {-1, +1}^N``.  Generation ``k`` glues ``2^N + 1`` copies of
generation ``k - 1`` (one central, one per corner direction) so that corner
vertices coincide; the copy centred at ``c`` occupies the Chebyshev box
``|x - c|_inf <= 3^k``.  Every cable carries arc-length measure with total
length 1, so all measures and distances below are exact integers or exact
multiples of cable fractions.

Centres always sit on even lattice coordinates and corners on odd ones, so
the two roles never collide.  The whole system is a tree: ``#cables ==
#vertices - 1``.
"""

import json

import numpy as np

__all__ = [
    "ResourceBudgetError",
    "CablePoint",
    "Subset",
    "Skeleton",
    "Soul",
    "CableSystem",
    "build_vicsek",
    "tree_distance",
    "geodesic",
    "ball",
    "volume",
    "volume_growth",
    "project_onto",
    "skeleton_in_ball",
    "ball_in_skeleton",
    "soul_adapted",
    "central_copies",
]

_SEG_TOL = 1e-12


class ResourceBudgetError(RuntimeError):
    """Raised when a requested construction exceeds the size budget."""


class CablePoint:
    """A point on a cable system: cable id plus arc-length parameter t in [0, 1].

    t = 0 is the cross-centre end of the cable, t = 1 the corner end.
    """

    __slots__ = ("cable", "t")

    def __init__(self, cable, t):
        if not 0.0 <= t <= 1.0:
            raise ValueError("cable parameter t must lie in [0, 1]")
        self.cable = int(cable)
        self.t = float(t)

    def __repr__(self):
        return "CablePoint(cable=%d, t=%g)" % (self.cable, self.t)

    def __eq__(self, other):
        return (
            isinstance(other, CablePoint)
            and self.cable == other.cable
            and self.t == other.t
        )


class Subset:
    """A measurable subset of a cable system: sorted disjoint cable segments.

    Stored as a list of ``(cable, t0, t1)`` with ``0 <= t0 < t1 <= 1``,
    sorted by ``(cable, t0)``; overlapping or touching segments on the same
    cable are merged.  The arc-length measure of a segment is ``t1 - t0``.
    """

    __slots__ = ("segments",)

    def __init__(self, segments=()):
        self.segments = _normalize_segments(segments)

    @classmethod
    def from_cables(cls, cable_ids):
        """Subset consisting of whole cables."""
        return cls([(int(c), 0.0, 1.0) for c in cable_ids])

    def measure(self):
        return float(sum(t1 - t0 for _, t0, t1 in self.segments))

    def cables(self):
        """Sorted ids of cables that carry a full [0, 1] segment."""
        return [c for c, t0, t1 in self.segments if t0 <= _SEG_TOL and t1 >= 1.0 - _SEG_TOL]

    def is_empty(self):
        return not self.segments

    def contains(self, point, tol=_SEG_TOL):
        """Whether a CablePoint lies in the closure of this subset."""
        for c, t0, t1 in self.segments:
            if c == point.cable and t0 - tol <= point.t <= t1 + tol:
                return True
        return False

    def union(self, other):
        return Subset(self.segments + other.segments)

    def intersect(self, other):
        out = []
        by_cable = {}
        for seg in other.segments:
            by_cable.setdefault(seg[0], []).append(seg)
        for c, a0, a1 in self.segments:
            for _, b0, b1 in by_cable.get(c, ()):
                lo, hi = max(a0, b0), min(a1, b1)
                if hi - lo > _SEG_TOL:
                    out.append((c, lo, hi))
        return Subset(out)

    def difference(self, other):
        by_cable = {}
        for seg in other.segments:
            by_cable.setdefault(seg[0], []).append(seg)
        out = []
        for c, a0, a1 in self.segments:
            pieces = [(a0, a1)]
            for _, b0, b1 in by_cable.get(c, ()):
                nxt = []
                for lo, hi in pieces:
                    if b1 <= lo + _SEG_TOL or b0 >= hi - _SEG_TOL:
                        nxt.append((lo, hi))
                        continue
                    if b0 - lo > _SEG_TOL:
                        nxt.append((lo, b0))
                    if hi - b1 > _SEG_TOL:
                        nxt.append((b1, hi))
                pieces = nxt
            out.extend((c, lo, hi) for lo, hi in pieces)
        return Subset(out)

    def is_subset_of(self, other, tol=1e-9):
        return self.difference(other).measure() <= tol

    def to_json(self):
        return {"segments": [[c, t0, t1] for c, t0, t1 in self.segments]}

    @classmethod
    def from_json(cls, obj):
        return cls([(int(c), float(t0), float(t1)) for c, t0, t1 in obj["segments"]])

    def __repr__(self):
        return "Subset(%d segments, measure=%g)" % (len(self.segments), self.measure())


def _normalize_segments(segments):
    cleaned = []
    for c, t0, t1 in segments:
        t0, t1 = float(t0), float(t1)
        if not (0.0 - _SEG_TOL <= t0 < t1 <= 1.0 + _SEG_TOL):
            if t1 - t0 <= _SEG_TOL:
                continue
            raise ValueError("segment (%s, %s, %s) outside [0, 1]" % (c, t0, t1))
        cleaned.append((int(c), max(t0, 0.0), min(t1, 1.0)))
    cleaned.sort()
    merged = []
    for c, t0, t1 in cleaned:
        if merged and merged[-1][0] == c and t0 <= merged[-1][2] + _SEG_TOL:
            prev = merged[-1]
            merged[-1] = (c, prev[1], max(prev[2], t1))
        else:
            merged.append((c, t0, t1))
    return merged


class Skeleton:
    """A generation-``level`` sub-copy of the system, centred at ``center``.

    Occupies the Chebyshev box of radius ``3^level`` around its centre; its
    cables are exactly the cables of crosses whose centre lies in the box of
    radius ``3^level - 1``.
    """

    __slots__ = ("system", "level", "center", "index")

    def __init__(self, system, level, center, index):
        self.system = system
        self.level = int(level)
        self.center = tuple(int(v) for v in center)
        self.index = int(index)  # position within the system's level index

    def radius(self):
        return 3 ** self.level

    def diameter(self):
        return 2 * 3 ** self.level

    def cross_ids(self):
        return self.system._skeleton_crosses(self.level, self.index)

    def cable_ids(self):
        per = 2 ** self.system.N
        out = []
        for cr in self.cross_ids():
            out.extend(range(cr * per, (cr + 1) * per))
        return out

    def subset(self):
        return Subset.from_cables(self.cable_ids())

    def measure(self):
        return float(len(self.cross_ids()) * 2 ** self.system.N)

    def vertex_ids(self):
        """Sorted ids of all vertices lying in this skeleton."""
        X = self.system
        box = 3 ** self.level
        d = np.abs(X.vertices - np.asarray(self.center)).max(axis=1)
        return np.flatnonzero(d <= box)

    def corners(self):
        """The 2^N extreme corner vertices, as lattice coordinate tuples."""
        r = 3 ** self.level
        c = np.asarray(self.center)
        out = []
        for delta in self.system._corner_deltas:
            out.append(tuple(int(v) for v in c + r * np.asarray(delta, dtype=np.int64)))
        return out

    def center_vertex(self):
        return self.system.vertex_id(self.center)

    def contains_point(self, point):
        X = self.system
        cross = point.cable // (2 ** X.N)
        return X._cross_chain[self.level][cross] == self.index

    def diag(self):
        """Union of the main diagonals of this skeleton, as a Subset.

        A diagonal runs through the centre in a direction ``delta`` in
        ``{-1, +1}^N`` (each direction pair giving one straight segment of
        length ``2 * 3^level``).
        """
        X = self.system
        c = np.asarray(self.center)
        r = 3 ** self.level
        per = 2 ** X.N
        cables = []
        for delta in X._corner_deltas:
            # along the ray from the centre in direction delta, crosses sit at
            # c + m*delta for even m < 3^level; each contributes its outward
            # delta-cable, and crosses with m >= 2 also the inward one, which
            # together tile the ray [0, 3^level] with unit cables
            step = np.asarray(delta, dtype=np.int64)
            for m in range(0, r, 2):
                u = tuple(int(v) for v in c + m * step)
                cr = X._cross_index.get(u)
                if cr is None:
                    continue
                cables.append(cr * per + X._delta_index[delta])
                if m >= 2:
                    cables.append(cr * per + X._delta_index[tuple(-d for d in delta)])
        return Subset.from_cables(sorted(set(cables)))

    def min_distance_to(self, point):
        """Exact tree distance from ``point`` to this skeleton (0 if inside)."""
        if self.contains_point(point):
            return 0.0
        X = self.system
        u, w = X.cables[point.cable]
        du = X._vertex_distance_to_set(u, self.vertex_ids())
        dw = X._vertex_distance_to_set(w, self.vertex_ids())
        return min(du + point.t, dw + (1.0 - point.t))

    def __repr__(self):
        return "Skeleton(level=%d, center=%s)" % (self.level, self.center)


class Soul:
    """A diagonal-carried core of a covering ball.

    ``carrier`` is the union of skeleton diagonals (a Subset); ``skeletons``
    lists the skeletons whose diagonals were used; ``order`` is 1 for the
    plain soul and 2 for the enlarged second-order soul.
    """

    __slots__ = ("order", "level", "skeletons", "carrier")

    def __init__(self, order, level, skeletons, carrier):
        self.order = int(order)
        self.level = int(level)
        self.skeletons = list(skeletons)
        self.carrier = carrier

    def measure(self):
        return self.carrier.measure()

    def __repr__(self):
        return "Soul(order=%d, level=%d, %d skeletons, measure=%g)" % (
            self.order,
            self.level,
            len(self.skeletons),
            self.measure(),
        )


class CableSystem:
    """Generation-``level`` cable system in dimension ``N``, rooted at the origin.

    Vertices are integer lattice points; ``cables[i] = (centre_vertex,
    corner_vertex)`` with the orientation fixed so that ``t = 0`` is the
    cross centre.  Cables are grouped by cross: cable ``i`` belongs to cross
    ``i // 2^N`` and points in direction ``_corner_deltas[i % 2^N]``.
    """

    def __init__(self, N, level):
        if N < 2:
            raise ValueError("ambient dimension N must be >= 2")
        if level < 0:
            raise ValueError("generation level must be >= 0")
        if (2 ** N + 1) ** level * 2 ** N > 2_000_000:
            raise ResourceBudgetError("cable system too large for the size budget")
        self.N = int(N)
        self.level = int(level)
        self._corner_deltas = [
            tuple(1 if (j >> b) & 1 else -1 for b in range(N - 1, -1, -1))
            for j in range(2 ** N)
        ]
        self._corner_deltas.sort()
        self._delta_index = {d: j for j, d in enumerate(self._corner_deltas)}
        self._build()

    # -- construction -------------------------------------------------------

    def _build(self):
        N, n = self.N, self.level
        # recursive centres of all generation-0 crosses, plus the chain of
        # skeleton memberships at every level
        centers = [np.zeros(N, dtype=np.int64)]
        for k in range(n, 0, -1):
            step = 2 * 3 ** (k - 1)
            new = []
            for c in centers:
                new.append(c)
                for delta in self._corner_deltas:
                    new.append(c + step * np.asarray(delta, dtype=np.int64))
            centers = new
        crosses = np.array(sorted(tuple(int(v) for v in c) for c in centers), dtype=np.int64)
        self.crosses = crosses
        self._cross_index = {tuple(int(v) for v in c): i for i, c in enumerate(crosses)}

        # skeleton index per level: a cross belongs to the level-k skeleton
        # whose centre is the unique even point c with |cross - c|_inf <= 3^k - 1
        # reachable through the recursive construction; recover it by rounding
        # the cross coordinates in the balanced base-3-like expansion.
        self._skeleton_centers = {}
        self._cross_chain = {}
        self._skeleton_index = {}
        for k in range(0, n + 1):
            cks = np.array([self._skeleton_center_of(c, k) for c in crosses], dtype=np.int64)
            uniq, inverse = np.unique(cks, axis=0, return_inverse=True)
            self._skeleton_centers[k] = uniq
            self._cross_chain[k] = inverse.reshape(-1).astype(np.int64)
            self._skeleton_index[k] = {tuple(int(v) for v in c): i for i, c in enumerate(uniq)}

        # vertices: cross centres plus corners
        vert_set = {}
        per = 2 ** N
        for c in crosses:
            vert_set.setdefault(tuple(int(v) for v in c), None)
            for delta in self._corner_deltas:
                vert_set.setdefault(tuple(int(c[j] + delta[j]) for j in range(N)), None)
        verts = np.array(sorted(vert_set), dtype=np.int64)
        self.vertices = verts
        self._vertex_index = {tuple(int(v) for v in p): i for i, p in enumerate(verts)}

        cables = np.empty((len(crosses) * per, 2), dtype=np.int64)
        for i, c in enumerate(crosses):
            u = self._vertex_index[tuple(int(v) for v in c)]
            for j, delta in enumerate(self._corner_deltas):
                w = self._vertex_index[tuple(int(c[b] + delta[b]) for b in range(N))]
                cables[i * per + j] = (u, w)
        self.cables = cables

        # adjacency and rooted-tree structure (root = origin vertex)
        V = len(verts)
        adj = [[] for _ in range(V)]
        for e, (u, w) in enumerate(cables):
            adj[u].append((w, e))
            adj[w].append((u, e))
        self._adjacency = adj
        root = self._vertex_index[tuple([0] * N)]
        self.root = root
        depth = np.full(V, -1, dtype=np.int64)
        parent = np.full(V, -1, dtype=np.int64)
        parent_cable = np.full(V, -1, dtype=np.int64)
        depth[root] = 0
        stack = [root]
        while stack:
            v = stack.pop()
            for w, e in adj[v]:
                if depth[w] < 0:
                    depth[w] = depth[v] + 1
                    parent[w] = v
                    parent_cable[w] = e
                    stack.append(w)
        self.depth = depth
        self.parent = parent
        self.parent_cable = parent_cable

    def _skeleton_center_of(self, cross, k):
        """Centre of the level-k skeleton containing a given cross centre.

        Cross centres have the exact expansion ``sum_j 2 * 3^j * d_j`` with
        digits ``d_j in {0} u {-1, +1}^N`` per coordinate pattern; dropping the
        digits below level k leaves the skeleton centre.
        """
        c = np.asarray(cross, dtype=np.int64).copy()
        # peel digits from the top: at level n-1..k keep, below k zero out.
        # Equivalent: repeatedly extract the top digit of the remainder.
        out = np.zeros_like(c)
        rem = c
        for j in range(self.level - 1, k - 1, -1):
            step = 2 * 3 ** j
            digit = np.sign(rem) * (np.abs(rem) > 3 ** j)
            out = out + step * digit
            rem = rem - step * digit
        return tuple(int(v) for v in out)

    # -- basic queries ------------------------------------------------------

    def vertex_id(self, coords):
        return self._vertex_index[tuple(int(v) for v in coords)]

    def vertex_count(self):
        return len(self.vertices)

    def cable_count(self):
        return len(self.cables)

    def total_measure(self):
        return float(len(self.cables))

    def cross_of_cable(self, cable):
        return int(cable) // (2 ** self.N)

    def vertex_point(self, vid):
        """Canonical CablePoint for a vertex (smallest incident cable id)."""
        w, e = min(self._adjacency[vid], key=lambda we: we[1])
        u = self.cables[e][0]
        return CablePoint(e, 0.0 if vid == u else 1.0)

    def as_point(self, x):
        """Coerce a vertex id, coordinate tuple, or CablePoint to a CablePoint."""
        if isinstance(x, CablePoint):
            return x
        if isinstance(x, (tuple, list, np.ndarray)):
            return self.vertex_point(self.vertex_id(x))
        return self.vertex_point(int(x))

    def point_coords(self, point):
        """Real-space lattice coordinates of a CablePoint."""
        u, w = self.cables[point.cable]
        cu = self.vertices[u].astype(float)
        cw = self.vertices[w].astype(float)
        return cu + point.t * (cw - cu)

    def whole(self):
        return Subset.from_cables(range(len(self.cables)))

    # -- distances ----------------------------------------------------------

    def vertex_distance(self, a, b):
        """Exact integer tree distance between two vertex ids."""
        a, b = int(a), int(b)
        da, db = int(self.depth[a]), int(self.depth[b])
        dist = 0
        while da > db:
            a = int(self.parent[a])
            da -= 1
            dist += 1
        while db > da:
            b = int(self.parent[b])
            db -= 1
            dist += 1
        while a != b:
            a = int(self.parent[a])
            b = int(self.parent[b])
            dist += 2
        return dist

    def distance(self, p, q):
        """Exact tree distance between two points (vertex ids or CablePoints)."""
        p = self.as_point(p)
        q = self.as_point(q)
        if p.cable == q.cable:
            return abs(p.t - q.t)
        pu, pw = self.cables[p.cable]
        qu, qw = self.cables[q.cable]
        best = min(
            p.t + self.vertex_distance(pu, qu) + q.t,
            p.t + self.vertex_distance(pu, qw) + (1 - q.t),
            (1 - p.t) + self.vertex_distance(pw, qu) + q.t,
            (1 - p.t) + self.vertex_distance(pw, qw) + (1 - q.t),
        )
        return best

    def _vertex_distance_to_set(self, v, vertex_ids):
        """Min tree distance from vertex v to a set of vertex ids (exact)."""
        ids = np.asarray(vertex_ids)
        if len(ids) == 0:
            return np.inf
        dists = self.vertex_distances_from(v)
        return float(dists[ids].min())

    def vertex_distances_from(self, v):
        """Integer tree distances from vertex v to all vertices (BFS)."""
        cache = getattr(self, "_bfs_cache", None)
        if cache is None:
            cache = {}
            self._bfs_cache = cache
        got = cache.get(int(v))
        if got is not None:
            return got
        V = len(self.vertices)
        dist = np.full(V, -1, dtype=np.int64)
        dist[v] = 0
        frontier = [int(v)]
        while frontier:
            nxt = []
            for a in frontier:
                for b, _ in self._adjacency[a]:
                    if dist[b] < 0:
                        dist[b] = dist[a] + 1
                        nxt.append(b)
            frontier = nxt
        if len(cache) < 256:
            cache[int(v)] = dist
        return dist

    def point_vertex_distances(self, point):
        """Exact tree distances from a cable point to every vertex."""
        p = self.as_point(point)
        u, w = self.cables[p.cable]
        du = self.vertex_distances_from(int(u))
        dw = self.vertex_distances_from(int(w))
        return np.minimum(du + p.t, dw + (1.0 - p.t))

    def _skeleton_membership(self, level):
        """Flat (vertex_ids, skeleton_idx) arrays over all level skeletons."""
        cache = getattr(self, "_member_cache", None)
        if cache is None:
            cache = {}
            self._member_cache = cache
        got = cache.get(level)
        if got is None:
            centers = self._skeleton_centers[level]
            box = 3 ** level
            vs, idx = [], []
            for i, c in enumerate(centers):
                ids = np.flatnonzero(
                    np.abs(self.vertices - np.asarray(c)).max(axis=1) <= box
                )
                vs.append(ids)
                idx.append(np.full(len(ids), i))
            got = (np.concatenate(vs), np.concatenate(idx), len(centers))
            cache[level] = got
        return got

    def skeleton_distances(self, level, point):
        """Min tree distance from a point to every level-``level`` skeleton.

        For a cable not containing the point the nearest point of the cable
        is one of its endpoints, so vertex distances suffice; the point's own
        skeleton is pinned to distance zero.  Entry ``i`` matches
        ``self.skeleton(level, i)`` and agrees with
        ``Skeleton.min_distance_to`` exactly.
        """
        p = self.as_point(point)
        dvert = self.point_vertex_distances(p)
        vs, idx, count = self._skeleton_membership(level)
        out = np.full(count, np.inf)
        np.minimum.at(out, idx, dvert[vs])
        out[int(self._cross_chain[level][self.cross_of_cable(p.cable)])] = 0.0
        return out

    # -- skeleton calculus --------------------------------------------------

    def skeleton(self, level, index):
        c = self._skeleton_centers[level][index]
        return Skeleton(self, level, c, index)

    def skeleton_count(self, level):
        return len(self._skeleton_centers[level])

    def skeleton_by_center(self, level, center):
        idx = self._skeleton_index[level].get(tuple(int(v) for v in center))
        if idx is None:
            raise KeyError("no level-%d skeleton centred at %s" % (level, center))
        return self.skeleton(level, idx)

    def skeleton_of_point(self, point, level):
        """The level-``level`` skeleton whose cables contain the point."""
        point = self.as_point(point)
        cross = self.cross_of_cable(point.cable)
        return self.skeleton(level, int(self._cross_chain[level][cross]))

    def _skeleton_crosses(self, level, index):
        return np.flatnonzero(self._cross_chain[level] == index)

    def skeletons_meeting(self, level, subset_vertex_ids):
        """Indices of level-``level`` skeletons containing any of the vertices."""
        idx = set()
        centers = self._skeleton_centers[level]
        box = 3 ** level
        pts = self.vertices[np.asarray(subset_vertex_ids, dtype=np.int64)]
        for i, c in enumerate(centers):
            if (np.abs(pts - c).max(axis=1) <= box).any():
                idx.add(i)
        return sorted(idx)

    def central_skeleton(self, level):
        """The level-``level`` skeleton centred at the origin."""
        return self.skeleton_by_center(level, (0,) * self.N)

    # -- serialization ------------------------------------------------------

    def to_json(self):
        return {
            "dimension": self.N,
            "level": self.level,
            "vertices": self.vertices.tolist(),
            "cables": self.cables.tolist(),
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def from_json(cls, obj):
        X = cls(obj["dimension"], obj["level"])
        if X.vertices.tolist() != obj["vertices"] or X.cables.tolist() != obj["cables"]:
            raise ValueError("serialized system does not match its canonical rebuild")
        return X

    def __repr__(self):
        return "CableSystem(N=%d, level=%d, %d vertices, %d cables)" % (
            self.N,
            self.level,
            len(self.vertices),
            len(self.cables),
        )


# -- module-level operations ------------------------------------------------


def build_vicsek(N, n):
    """Build the generation-``n`` cable system in dimension ``N``."""
    return CableSystem(N, n)


def tree_distance(X, a, b):
    """Exact geodesic distance between two points of the system."""
    return X.distance(a, b)


def geodesic(X, a, b):
    """The unique path from a to b, as a Subset of cable segments."""
    p = X.as_point(a)
    q = X.as_point(b)
    if p.cable == q.cable:
        lo, hi = min(p.t, q.t), max(p.t, q.t)
        return Subset([(p.cable, lo, hi)] if hi > lo else [])

    def entry_vertex(pt, other):
        u, w = X.cables[pt.cable]
        qu, qw = X.cables[other.cable]
        thru_u = pt.t + min(
            X.vertex_distance(u, qu) + other.t,
            X.vertex_distance(u, qw) + 1 - other.t,
        )
        thru_w = (1 - pt.t) + min(
            X.vertex_distance(w, qu) + other.t,
            X.vertex_distance(w, qw) + 1 - other.t,
        )
        if thru_u <= thru_w:
            return int(u), (pt.cable, 0.0, pt.t)
        return int(w), (pt.cable, pt.t, 1.0)

    va, seg_a = entry_vertex(p, q)
    vb, seg_b = entry_vertex(q, p)
    segs = [s for s in (seg_a, seg_b) if s[2] - s[1] > _SEG_TOL]
    # vertex-to-vertex part via parent walk to the common ancestor
    a_, b_ = va, vb
    chain_a, chain_b = [a_], [b_]
    da, db = int(X.depth[a_]), int(X.depth[b_])
    while da > db:
        a_ = int(X.parent[a_])
        chain_a.append(a_)
        da -= 1
    while db > da:
        b_ = int(X.parent[b_])
        chain_b.append(b_)
        db -= 1
    while a_ != b_:
        a_ = int(X.parent[a_])
        b_ = int(X.parent[b_])
        chain_a.append(a_)
        chain_b.append(b_)
    chain = chain_a + chain_b[-2::-1]
    for x, y in zip(chain[:-1], chain[1:]):
        if X.parent[x] == y:
            segs.append((int(X.parent_cable[x]), 0.0, 1.0))
        else:
            segs.append((int(X.parent_cable[y]), 0.0, 1.0))
    return Subset(segs)


def ball(X, x, r):
    """Metric ball around x as an exact Subset.

    The segment list represents the closure; open and closed balls differ
    only by a measure-zero boundary, so containment queries that care about
    the boundary (skeleton_in_ball, ball_in_skeleton) use exact distance
    comparisons instead of this subset.
    """
    if r <= 0:
        return Subset([])
    p = X.as_point(x)
    u, w = X.cables[p.cable]
    du = X.vertex_distances_from(int(u)).astype(float)
    dw = X.vertex_distances_from(int(w)).astype(float)
    dv = np.minimum(du + p.t, dw + 1.0 - p.t)  # distance from x to each vertex
    segs = []
    for e, (a, b) in enumerate(X.cables):
        if e == p.cable:
            lo, hi = max(0.0, p.t - r), min(1.0, p.t + r)
            if hi - lo > _SEG_TOL:
                segs.append((e, lo, hi))
            continue
        # covered from the a end: t < r - d(x, a); from the b end symmetric
        ra = r - dv[a]
        rb = r - dv[b]
        if ra > _SEG_TOL:
            segs.append((e, 0.0, min(1.0, ra)))
        if rb > _SEG_TOL:
            segs.append((e, max(0.0, 1.0 - rb), 1.0))
    return Subset(segs)


def volume(X, S):
    """Arc-length measure of a Subset."""
    return S.measure()


def volume_growth(X, x, r):
    """m(B(x, r)) for the open metric ball."""
    return ball(X, x, r).measure()


def project_onto(X, gamma, p):
    """Exact metric projection of point p onto a closed aligned subset.

    ``gamma`` may be a Skeleton, Soul, or Subset consisting of whole cables.
    The projection onto a connected union of cables in a tree is unique; for
    a disconnected target a tie between components raises ValueError.
    """
    p = X.as_point(p)
    cable_ids = _aligned_cable_ids(gamma)
    cable_set = set(cable_ids)
    if p.cable in cable_set:
        return p
    gamma_vertices = set()
    for e in cable_ids:
        gamma_vertices.add(int(X.cables[e][0]))
        gamma_vertices.add(int(X.cables[e][1]))
    u, w = X.cables[p.cable]
    ids = np.fromiter(gamma_vertices, dtype=np.int64)
    du = X.vertex_distances_from(int(u))[ids]
    dw = X.vertex_distances_from(int(w))[ids]
    through_u = p.t + du.min()
    through_w = (1.0 - p.t) + dw.min()
    if through_u < through_w:
        best = ids[np.flatnonzero(du == du.min())]
    elif through_w < through_u:
        best = ids[np.flatnonzero(dw == dw.min())]
    else:
        # p equidistant through both cable ends: only possible for vertex
        # points or genuinely ambiguous disconnected targets
        cand_u = set(ids[np.flatnonzero(du == du.min())].tolist())
        cand_w = set(ids[np.flatnonzero(dw == dw.min())].tolist())
        both = cand_u | cand_w
        if len(both) > 1:
            raise ValueError("projection onto disconnected target is not unique")
        best = np.fromiter(both, dtype=np.int64)
    if len(best) > 1:
        raise ValueError("projection onto disconnected target is not unique")
    # represent the gate vertex on one of the target's own cables
    gate = int(best[0])
    e = min(e for _, e in X._adjacency[gate] if e in cable_set)
    return CablePoint(e, 0.0 if gate == int(X.cables[e][0]) else 1.0)


def _aligned_cable_ids(gamma):
    if isinstance(gamma, Skeleton):
        return gamma.cable_ids()
    if isinstance(gamma, Soul):
        gamma = gamma.carrier
    if isinstance(gamma, Subset):
        ids = gamma.cables()
        if len(ids) != len(gamma.segments):
            raise ValueError("aligned subsets must consist of whole cables")
        return ids
    raise TypeError("expected Skeleton, Soul, or whole-cable Subset")


def skeleton_in_ball(X, x, r):
    """Largest skeleton through x guaranteed inside the open ball B(x, r).

    The level-k skeleton containing x has diameter 2*3^k, so it fits inside
    the open ball exactly when r > 2*3^k.  Returns None when r <= 2.
    """
    p = X.as_point(x)
    if r <= 2.0:
        return None
    k = int(np.floor(np.log(r / 2.0) / np.log(3.0) + 1e-12))
    while 2 * 3 ** k >= r:  # strict inequality needed for the open ball
        k -= 1
    if k < 0:
        return None
    k = min(k, X.level)
    return X.skeleton_of_point(p, k)


def ball_in_skeleton(X, x, r):
    """Smallest indexed skeleton containing the closed ball around x.

    Searches the skeleton chain through x upward; returns None if the closed
    ball is not contained in any skeleton of the truncation (it always is in
    the whole system, the level-``X.level`` skeleton, unless the ball leaks
    past the truncation boundary, which cannot happen).
    """
    p = X.as_point(x)
    for k in range(0, X.level + 1):
        W = X.skeleton_of_point(p, k)
        center_v = W.center_vertex()
        # closed ball inside the box iff dist(x, centre) + r <= box reach via
        # the exact criterion: every point of the ball is within the skeleton.
        # Use the exact tree criterion: the ball leaves the skeleton iff it
        # reaches past one of the skeleton's corner vertices.
        if _closed_ball_inside_skeleton(X, p, r, W):
            return W
    return None


def _closed_ball_inside_skeleton(X, p, r, W):
    """Exact containment test for a closed ball inside a skeleton.

    In a tree, the closed ball leaves the union-of-cables W only by crossing
    one of W's boundary vertices (its 2^N corner vertices, plus the corner
    vertices shared with neighbouring skeletons on the outside).  It suffices
    to check that for every vertex v of W incident to a cable outside W, the
    ball does not properly pass v: d(x, v) >= r is required only when x's own
    side continues outside.
    """
    cable_set = set(W.cable_ids())
    if p.cable not in cable_set:
        return False
    for v in W.vertex_ids():
        outside = [e for _, e in X._adjacency[int(v)] if e not in cable_set]
        if not outside:
            continue
        d = X.distance(p, X.vertex_point(int(v)))
        if d < r:  # the closed ball pokes past v into an outside cable
            return False
    return True


def soul_adapted(X, B_center, B_radius, c, order=1):
    """Soul of a covering ball: union of diagonals of skeletons meeting it.

    ``c`` is the covering's overlap constant.  The soul level is
    ``n_i = max(floor(log3(r / (8c))), 0)`` for a first-order soul and the
    second-order extension uses ``k_i = max(floor(log3(r / (8c^2))), 0)``,
    collecting diagonals of level-``k_i`` skeletons meeting the first-order
    carrier.
    """
    p = X.as_point(B_center)
    r = float(B_radius)
    n_i = max(int(np.floor(np.log(r / (8.0 * c)) / np.log(3.0) + 1e-12)), 0)
    n_i = min(n_i, X.level)
    dists = X.skeleton_distances(n_i, p)
    meet = [X.skeleton(n_i, i) for i in np.flatnonzero(dists < r)]
    carrier = Subset([])
    for W in meet:
        carrier = carrier.union(W.diag())
    soul1 = Soul(1, n_i, meet, carrier)
    if order == 1:
        return soul1
    if order != 2:
        raise ValueError("order must be 1 or 2")
    k_i = max(int(np.floor(np.log(r / (8.0 * c * c)) / np.log(3.0) + 1e-12)), 0)
    k_i = min(k_i, X.level)
    # second order: diagonals of level-k skeletons meeting the first carrier
    carrier_vertices = set()
    for cbl, t0, t1 in soul1.carrier.segments:
        u, w = X.cables[cbl]
        carrier_vertices.add(int(u))
        carrier_vertices.add(int(w))
    ids = sorted(carrier_vertices)
    meet2_idx = X.skeletons_meeting(k_i, ids)
    meet2 = [X.skeleton(k_i, i) for i in meet2_idx]
    carrier2 = Subset([])
    for W in meet2:
        carrier2 = carrier2.union(W.diag())
    return Soul(2, k_i, meet2, carrier2.union(soul1.carrier))


def central_copies(X, k):
    """The four distinguished level-(k-1) pieces of the central level-k copy.

    Returns ``(U_first, U_second, U_third, U_fourth, D)`` where the first is
    the central piece, the next three are corner pieces (lower-right,
    upper-left, upper-right), and ``D`` is the central piece minus the open
    unit balls at its four corners.  For ``k = 0`` all four coincide with the
    central cross and ``D`` is empty.
    """
    if X.N != 2:
        raise ValueError("central_copies is defined for N = 2")
    if k > X.level:
        raise ValueError("k exceeds the truncation level")
    if k == 0:
        W = X.central_skeleton(0)
        return W, W, W, W, Subset([])
    step = 2 * 3 ** (k - 1)
    U0 = X.central_skeleton(k - 1)
    U1 = X.skeleton_by_center(k - 1, (step, -step))
    U2 = X.skeleton_by_center(k - 1, (-step, step))
    U3 = X.skeleton_by_center(k - 1, (step, step))
    D = U0.subset()
    for corner in U0.corners():
        D = D.difference(ball(X, corner, 1.0))
    return U0, U1, U2, U3, D
