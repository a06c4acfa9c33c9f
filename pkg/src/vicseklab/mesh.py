"""Lumped piecewise-linear discretization of cable systems.

Each cable is subdivided into ``M`` equal segments of length ``h = 1/M``.
Mesh nodes are the system vertices (keeping their vertex ids) followed by
cable-interior nodes in parameter order, so the node count is
``#cables * M + 1`` on a tree.  The mass vector is the lumped arc-length
measure (``h`` at interior nodes, ``deg * h / 2`` at vertices) and the
stiffness matrix assembles ``1/h`` couplings per mesh segment, so that
``u^T K u`` equals the exact Dirichlet energy of the piecewise-linear
interpolant and ``sum(mass)`` equals the total measure.
"""

import json

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .geometry import CablePoint, Subset

__all__ = [
    "Mesh",
    "MeshFunction",
    "StiffnessPair",
    "discretize",
    "assemble",
    "gradient",
    "lp_norm",
    "lp_norm_gradient",
    "mean_over",
    "integration_weights",
    "node_mask",
    "indicator",
    "radial_extend",
]


class StiffnessPair:
    """Stiffness matrix K (CSR) and lumped mass vector D of a mesh."""

    __slots__ = ("K", "D")

    def __init__(self, K, D):
        self.K = K
        self.D = D

    @property
    def n(self):
        return len(self.D)

    def stiffness_triplets(self):
        coo = self.K.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order], coo.data[order]], axis=1)


class Mesh:
    """Uniform subdivision of a cable system into segments of length 1/M."""

    def __init__(self, X, M):
        if M < 1:
            raise ValueError("subdivision M must be >= 1")
        self.X = X
        self.M = int(M)
        self.h = 1.0 / M
        E = X.cable_count()
        V = X.vertex_count()
        self.n_nodes = V + E * (M - 1)  # == E*M + 1 on a tree
        cable_nodes = np.empty((E, M + 1), dtype=np.int64)
        nxt = V
        for e, (u, w) in enumerate(X.cables):
            cable_nodes[e, 0] = u
            cable_nodes[e, M] = w
            for j in range(1, M):
                cable_nodes[e, j] = nxt
                nxt += 1
        assert nxt == self.n_nodes == V + E * (M - 1)
        self.cable_nodes = cable_nodes

        # canonical (cable, t) per node plus all representations for vertices
        reprs = [[] for _ in range(self.n_nodes)]
        for e in range(E):
            for j in range(M + 1):
                reprs[cable_nodes[e, j]].append((e, j / M))
        self.node_reprs = reprs

        seg_a = cable_nodes[:, :-1].ravel()
        seg_b = cable_nodes[:, 1:].ravel()
        self.seg_a, self.seg_b = seg_a, seg_b

        mass = np.zeros(self.n_nodes)
        np.add.at(mass, seg_a, self.h / 2)
        np.add.at(mass, seg_b, self.h / 2)
        self.mass = mass

        w = np.full(len(seg_a), self.h)
        self.adjacency = sp.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([seg_a, seg_b]), np.concatenate([seg_b, seg_a]))),
            shape=(self.n_nodes, self.n_nodes),
        ).tocsr()
        self._dist_cache = {}
        self._dist_matrix = None

    # -- structure ----------------------------------------------------------

    def node_point(self, i):
        """Canonical CablePoint of a mesh node."""
        e, t = self.node_reprs[i][0]
        return CablePoint(e, t)

    def vertex_node(self, vid):
        return int(vid)  # vertices keep their ids

    def node_at(self, cable, t):
        """Mesh node sitting exactly at (cable, t); raises if t is off-grid."""
        j = t * self.M
        if abs(j - round(j)) > 1e-9:
            raise ValueError("no mesh node at t=%g with M=%d" % (t, self.M))
        return int(self.cable_nodes[int(cable), int(round(j))])

    def nearest_node(self, point):
        """Mesh node closest to a CablePoint (ties toward smaller t)."""
        j = int(np.floor(point.t * self.M + 0.5))
        return int(self.cable_nodes[point.cable, min(j, self.M)])

    def stiffness(self):
        n = self.n_nodes
        inv = 1.0 / self.h
        rows = np.concatenate([self.seg_a, self.seg_b, self.seg_a, self.seg_b])
        cols = np.concatenate([self.seg_a, self.seg_b, self.seg_b, self.seg_a])
        vals = np.concatenate(
            [
                np.full(len(self.seg_a), inv),
                np.full(len(self.seg_a), inv),
                np.full(len(self.seg_a), -inv),
                np.full(len(self.seg_a), -inv),
            ]
        )
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    # -- distances ----------------------------------------------------------

    def distances_from(self, node):
        got = self._dist_cache.get(int(node))
        if got is not None:
            return got
        d = csgraph.dijkstra(self.adjacency, directed=False, indices=int(node))
        if len(self._dist_cache) < 32:
            self._dist_cache[int(node)] = d
        return d

    def distance_matrix(self):
        if self._dist_matrix is None:
            self._dist_matrix = csgraph.dijkstra(self.adjacency, directed=False)
        return self._dist_matrix

    def distances_from_set(self, nodes):
        """(len(nodes), n) distance block; rows follow the given order."""
        return csgraph.dijkstra(self.adjacency, directed=False, indices=list(nodes))

    # -- subset machinery ---------------------------------------------------

    def clipped_segments(self, S):
        """Mesh-segment pieces covered by a Subset.

        Yields ``(a, b, sa, sb, length)`` per covered piece of a mesh segment
        with end nodes a, b; ``sa, sb`` are local coordinates in [0, 1] of the
        piece inside the segment.
        """
        M, h = self.M, self.h
        for cbl, t0, t1 in S.segments:
            j0 = int(np.floor(t0 * M + 1e-9))
            j1 = int(np.ceil(t1 * M - 1e-9))
            for j in range(j0, min(j1, M)):
                lo = max(t0, j / M)
                hi = min(t1, (j + 1) / M)
                if hi - lo <= 1e-12:
                    continue
                a = int(self.cable_nodes[cbl, j])
                b = int(self.cable_nodes[cbl, j + 1])
                yield a, b, (lo - j / M) / h, (hi - j / M) / h, hi - lo

    def __repr__(self):
        return "Mesh(level=%d, M=%d, %d nodes)" % (self.X.level, self.M, self.n_nodes)


class MeshFunction:
    """Nodal values of a piecewise-linear function on a mesh."""

    __slots__ = ("mesh", "values")

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_nodes,):
            raise ValueError("values must have one entry per mesh node")
        self.mesh = mesh
        self.values = values

    def at(self, point):
        """Exact value of the piecewise-linear interpolant at a CablePoint."""
        m = self.mesh
        j = int(np.floor(point.t * m.M - 1e-12))
        j = min(max(j, 0), m.M - 1)
        s = point.t * m.M - j
        a = m.cable_nodes[point.cable, j]
        b = m.cable_nodes[point.cable, j + 1]
        return (1 - s) * self.values[a] + s * self.values[b]

    def to_json(self):
        return {"values": self.values.tolist()}

    def to_csv(self, path, meta=""):
        with open(path, "w") as fh:
            if meta:
                fh.write("# %s\n" % meta)
            fh.write("node,value\n")
            for i, v in enumerate(self.values):
                fh.write("%d,%s\n" % (i, repr(float(v))))

    @classmethod
    def from_csv(cls, mesh, path):
        vals = np.zeros(mesh.n_nodes)
        with open(path) as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("node"):
                    continue
                i, v = line.strip().split(",")
                vals[int(i)] = float(v)
        return cls(mesh, vals)


# -- module-level operations ------------------------------------------------


def discretize(X, M):
    """Subdivide every cable of X into M equal mesh segments."""
    return Mesh(X, M)


def assemble(mesh):
    """Assemble the stiffness matrix and lumped mass vector."""
    return StiffnessPair(mesh.stiffness(), mesh.mass.copy())


def gradient(mesh, u):
    """Per-mesh-segment slopes of the piecewise-linear interpolant, (E, M)."""
    u = np.asarray(u, dtype=float)
    diffs = (u[mesh.seg_b] - u[mesh.seg_a]) / mesh.h
    return diffs.reshape(mesh.X.cable_count(), mesh.M)


def integration_weights(mesh, S=None):
    """Nodal weights w with w . u == integral of the PWL interpolant over S.

    For S=None this is the lumped mass vector; for partial coverage of a mesh
    segment the cut-point values are spread onto the end nodes, keeping the
    functional exact for piecewise-linear integrands.
    """
    if S is None:
        return mesh.mass.copy()
    w = np.zeros(mesh.n_nodes)
    for a, b, sa, sb, ln in mesh.clipped_segments(S):
        w[a] += ln / 2 * ((1 - sa) + (1 - sb))
        w[b] += ln / 2 * (sa + sb)
    return w


def lp_integral(mesh, u, p, S=None):
    """Trapezoid integral of |u|^p over S (whole system by default)."""
    u = np.asarray(u, dtype=float)
    if S is None:
        return float(np.dot(mesh.mass, np.abs(u) ** p))
    total = 0.0
    for a, b, sa, sb, ln in mesh.clipped_segments(S):
        ua = (1 - sa) * u[a] + sa * u[b]
        ub = (1 - sb) * u[a] + sb * u[b]
        total += ln / 2 * (abs(ua) ** p + abs(ub) ** p)
    return float(total)


def lp_norm(mesh, u, p, S=None):
    """L^p norm of the nodal function over S (sup norm for p=inf)."""
    u = np.asarray(u, dtype=float)
    if p == np.inf:
        if S is None:
            return float(np.abs(u).max())
        best = 0.0
        for a, b, sa, sb, _ in mesh.clipped_segments(S):
            ua = (1 - sa) * u[a] + sa * u[b]
            ub = (1 - sb) * u[a] + sb * u[b]
            best = max(best, abs(ua), abs(ub))
        return best
    return lp_integral(mesh, u, p, S) ** (1.0 / p)


def lp_norm_gradient(mesh, u, p, S=None):
    """L^p norm of the (piecewise-constant) gradient over S; exact."""
    slopes = gradient(mesh, u)
    if p == np.inf:
        if S is None:
            return float(np.abs(slopes).max())
        best = 0.0
        for cbl, t0, t1 in S.segments:
            j0 = int(np.floor(t0 * mesh.M + 1e-9))
            j1 = int(np.ceil(t1 * mesh.M - 1e-9))
            best = max(best, float(np.abs(slopes[cbl, j0:j1]).max(initial=0.0)))
        return best
    if S is None:
        return float((mesh.h * (np.abs(slopes) ** p).sum()) ** (1.0 / p))
    total = 0.0
    M = mesh.M
    for cbl, t0, t1 in S.segments:
        j0 = int(np.floor(t0 * M + 1e-9))
        j1 = int(np.ceil(t1 * M - 1e-9))
        for j in range(j0, min(j1, M)):
            ln = min(t1, (j + 1) / M) - max(t0, j / M)
            if ln > 1e-12:
                total += ln * abs(slopes[cbl, j]) ** p
    return float(total ** (1.0 / p))


def mean_over(mesh, u, S):
    """Mean of the PWL interpolant over a Subset (exact)."""
    w = integration_weights(mesh, S)
    total = w.sum()
    if total <= 0:
        raise ValueError("cannot average over a null set")
    return float(np.dot(w, np.asarray(u, dtype=float)) / total)


def node_mask(mesh, S):
    """Boolean mask of mesh nodes lying in the closure of S."""
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    for a, b, sa, sb, _ in mesh.clipped_segments(S):
        if sa <= 1e-9:
            mask[a] = True
        if sb >= 1 - 1e-9:
            mask[b] = True
    return mask


def indicator(mesh, S):
    """Nodal indicator of S: one on every node in the closure of S."""
    return node_mask(mesh, S).astype(float)


def radial_extend(mesh, S, phi):
    """Extend nodal values given on S to the whole mesh, constant along
    projection fibres: the extension at x equals phi at the metric projection
    of x onto S.

    ``phi`` is an array over all mesh nodes whose values are read only on the
    nodes of S (or a callable mapping node id -> value).
    """
    mask = node_mask(mesh, S)
    sources = np.flatnonzero(mask)
    if len(sources) == 0:
        raise ValueError("cannot extend from an empty set")
    dmat = mesh.distances_from_set(sources)
    gate = sources[np.argmin(dmat, axis=0)]
    if callable(phi):
        vals = np.array([phi(int(g)) for g in gate], dtype=float)
    else:
        phi = np.asarray(phi, dtype=float)
        vals = phi[gate]
    return vals
