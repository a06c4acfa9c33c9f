"""Maximal function, Whitney covering, soul-adapted partition of unity and
the Sobolev Calderon-Zygmund decomposition on the cable system.

The constructions are deliberately verification-oriented: every covering,
partition and decomposition carries a ``verify`` method that re-measures its
defining properties (covering axioms, partition axioms, the decomposition
bounds) and reports the measured constants instead of trusting the theory.
Node-level approximations (node-centered maximal balls, node distances to the
complement) are absorbed into those measured constants.
"""

import json

import numpy as np

from .geometry import CablePoint, Subset, ball, soul_adapted
from .mesh import (
    MeshFunction,
    gradient,
    lp_integral,
    lp_norm_gradient,
    mean_over,
    node_mask,
    radial_extend,
)

ALPHA = np.log(5.0) / np.log(3.0)

SMALL_RADIUS = 8.0  # radius split between the small and big ball classes


class MarginError(RuntimeError):
    """The construction would need a larger ambient truncation."""


def bump_profile(t):
    """Project-wide bump: quintic smoothstep from 1 at 0 down to 0 at 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    s = t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    return 1.0 - s


# ---------------------------------------------------------------------------
# maximal function
# ---------------------------------------------------------------------------


def maximal_function(w):
    """Approximate uncentered maximal function of a nonnegative function.

    The supremum runs over balls centered at mesh nodes with radii on the
    geometric grid ``h * 2**k``; averages are node-level (trapezoid mass
    weights).  The value at ``x`` is the best average among grid balls
    containing ``x``.
    """
    mesh = w.mesh
    vals = np.asarray(w.values, dtype=float)
    if vals.min() < -1e-12:
        raise ValueError("maximal_function expects a nonnegative function")
    vals = np.maximum(vals, 0.0)
    D = mesh.distance_matrix()
    mv = mesh.mass * vals
    out = np.zeros(mesh.n_nodes)
    diam = float(D.max())
    rho = mesh.h
    while True:
        inside = D <= rho + 1e-9
        member = inside.astype(float)
        avg = (member @ mv) / (member @ mesh.mass)
        cand = np.where(inside, avg[:, None], 0.0).max(axis=0)
        np.maximum(out, cand, out=out)
        if rho >= diam:
            break
        rho *= 2.0
    return MeshFunction(mesh, out)


def suggest_lambdas(maxfn, q, quantiles=(0.55, 0.65, 0.75, 0.85, 0.95)):
    """Thresholds for a sweep: log-quantiles of the positive part of M^(1/q)."""
    vals = np.asarray(maxfn.values, dtype=float) ** (1.0 / q)
    pos = vals[vals > 0]
    if len(pos) == 0:
        raise ValueError("maximal function vanishes identically")
    return [float(v) for v in np.exp(np.quantile(np.log(pos), quantiles))]


# ---------------------------------------------------------------------------
# Whitney covering
# ---------------------------------------------------------------------------


class CoverBall:
    """One emitted covering ball, ten times its Vitali core."""

    __slots__ = ("index", "center", "point", "radius", "core_radius", "kind", "in_J")

    def __init__(self, index, center, point, radius, core_radius):
        self.index = index
        self.center = int(center)
        self.point = point
        self.radius = float(radius)
        self.core_radius = float(core_radius)
        self.kind = "small" if self.radius <= SMALL_RADIUS else "big"
        self.in_J = False

    def __repr__(self):
        return "CoverBall(#%d, node %d, r=%.4g, %s%s)" % (
            self.index,
            self.center,
            self.radius,
            self.kind,
            ", J" if self.in_J else "",
        )


class Covering:
    """Whitney/Vitali covering of an open node set by balls ``10 * core``."""

    def __init__(self, mesh, balls, omega_mask, dist_f, blockers):
        self.mesh = mesh
        self.balls = balls
        self.omega_mask = omega_mask
        self.dist_f = dist_f
        self.blockers = blockers  # candidate node -> blocking ball index
        self._subsets = {}
        self._measure_constants()

    def _measure_constants(self):
        D = self.mesh.distance_matrix()
        centers = np.array([b.center for b in self.balls])
        radii = np.array([b.radius for b in self.balls])
        c = 1.0
        for i in range(len(self.balls)):
            d_row = D[centers[i], centers]
            meets = d_row < radii[i] + radii
            for j in np.flatnonzero(meets):
                if j != i:
                    c = max(c, radii[i] / radii[j], radii[j] / radii[i])
        self.c = float(c)
        counts = np.zeros(self.mesh.n_nodes, dtype=np.int64)
        for i, b in enumerate(self.balls):
            counts += D[b.center] < b.radius
        self.overlap = int(counts.max()) if len(self.balls) else 0
        threshold = 9.0 * self.c**2
        self.J = []
        for b in self.balls:
            b.in_J = b.kind == "big" and b.radius >= threshold
            if b.in_J:
                self.J.append(b.index)
        self.small = [b.index for b in self.balls if b.kind == "small"]
        self.big = [b.index for b in self.balls if b.kind == "big"]

    def ball_subset(self, i):
        got = self._subsets.get(i)
        if got is None:
            b = self.balls[i]
            got = ball(self.mesh.X, b.point, b.radius)
            self._subsets[i] = got
        return got

    def verify(self):
        """Re-measure the covering axioms; returns a report dict."""
        mesh = self.mesh
        D = mesh.distance_matrix()
        balls = self.balls
        report = {}
        # Vitali cores pairwise disjoint
        gap = np.inf
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                d = D[balls[i].center, balls[j].center]
                gap = min(gap, d - balls[i].core_radius - balls[j].core_radius)
        report["cores_disjoint"] = bool(gap > 0) if len(balls) > 1 else True
        report["core_gap"] = float(gap) if np.isfinite(gap) else None
        # half-balls cover every node of the open set
        omega_nodes = np.flatnonzero(self.omega_mask)
        covered = np.zeros(len(omega_nodes), dtype=bool)
        for b in balls:
            covered |= D[b.center, omega_nodes] < 0.5 * b.radius
        report["halves_cover_omega"] = bool(covered.all())
        # continuum certificate: every candidate core is inside the half-ball
        # of the ball that blocked it (or is itself selected)
        ok = True
        for x, j in self.blockers.items():
            b = balls[j]
            rx = self.dist_f[x] / 30.0
            ok = ok and (D[x, b.center] <= rx + b.core_radius + 1e-9)
            ok = ok and (b.core_radius >= rx - 1e-9)
        report["vitali_certificate"] = bool(ok)
        # balls stay inside the open set and their dilates reach F
        inside = True
        touch = True
        consistent = True
        for b in balls:
            members = np.flatnonzero(D[b.center] < b.radius)
            inside = inside and bool(self.omega_mask[members].all())
            touch = touch and (self.dist_f[b.center] <= 10.0 * b.radius + 1e-9)
            consistent = consistent and abs(b.radius - self.dist_f[b.center] / 3.0) <= 1e-12
        report["balls_inside_omega"] = bool(inside)
        report["dilates_touch_complement"] = bool(touch)
        report["radius_consistency"] = bool(consistent)
        report["comparability_c"] = self.c
        report["overlap_N"] = self.overlap
        report["n_balls"] = len(balls)
        report["n_small"] = len(self.small)
        report["n_big"] = len(self.big)
        report["n_J"] = len(self.J)
        return report

    def to_json(self):
        X = self.mesh.X
        recs = []
        for b in self.balls:
            recs.append(
                {
                    "index": b.index,
                    "center_node": b.center,
                    "center_coords": [float(v) for v in X.point_coords(b.point)],
                    "radius": b.radius,
                    "core_radius": b.core_radius,
                    "kind": b.kind,
                    "in_J": b.in_J,
                }
            )
        return {
            "balls": recs,
            "comparability_c": self.c,
            "overlap_N": self.overlap,
        }


def whitney_cover(mesh, omega):
    """Whitney-type covering of an open set by balls with Vitali cores.

    ``omega`` is either a Subset or a boolean node mask.  Cores are
    ``B(x, d(x, F) / 30)`` over nodes of the set, greedily selected in order
    of decreasing core radius (ties by center coordinates); the emitted balls
    are the tenfold dilates of the selected cores.  Distances to the
    complement ``F`` are node distances.
    """
    if isinstance(omega, Subset):
        mask = np.array(
            [omega.contains(mesh.node_point(i)) for i in range(mesh.n_nodes)],
            dtype=bool,
        )
    else:
        mask = np.asarray(omega, dtype=bool)
        if mask.shape != (mesh.n_nodes,):
            raise ValueError("omega mask must have one entry per mesh node")
    if not mask.any():
        raise ValueError("the open set is empty")
    if mask.all():
        raise ValueError("the complement is empty")
    D = mesh.distance_matrix()
    f_nodes = np.flatnonzero(~mask)
    dist_f = D[f_nodes].min(axis=0)
    X = mesh.X
    candidates = np.flatnonzero(mask)

    def sort_key(x):
        coords = X.point_coords(mesh.node_point(x))
        return (-dist_f[x],) + tuple(np.round(coords, 9))

    candidates = sorted(candidates, key=sort_key)
    selected = []
    sel_centers = []
    sel_cores = np.empty(0)
    blockers = {}
    for x in candidates:
        core = dist_f[x] / 30.0
        if sel_centers:
            slack = D[x, sel_centers] - (core + sel_cores)
            hit = np.flatnonzero(slack <= 0)
            if len(hit):
                blockers[int(x)] = int(hit[0])
                continue
        selected.append(x)
        sel_centers.append(x)
        sel_cores = np.append(sel_cores, core)
    balls = []
    for i, x in enumerate(selected):
        core = dist_f[x] / 30.0
        balls.append(CoverBall(i, x, mesh.node_point(int(x)), 10.0 * core, core))
    return Covering(mesh, balls, mask, dist_f, blockers)


# ---------------------------------------------------------------------------
# partition of unity
# ---------------------------------------------------------------------------


class PartitionOfUnity:
    """Per-ball bumps ``eta_i`` and normalized weights ``chi_i = eta_i/eta``.

    Big balls get soul-radial bumps (constant along projection fibres of the
    diagonal carrier), so their gradients live on the carrier; small balls get
    plain metric bumps.
    """

    def __init__(self, cover, eta, chi, eta_sum, souls, souls2, carriers, carriers2, lambda_masks):
        self.cover = cover
        self.eta = eta
        self.chi = chi
        self.eta_sum = eta_sum
        self.souls = souls
        self.souls2 = souls2
        self.carriers = carriers  # i -> Subset (first-order, clipped to ball)
        self.carriers2 = carriers2  # i -> Subset (second-order, clipped)
        self.lambda_masks = lambda_masks  # i -> node mask of the plateau set

    def verify(self):
        mesh = self.cover.mesh
        D = mesh.distance_matrix()
        balls = self.cover.balls
        report = {}
        lo = min(float(chi.min()) for chi in self.chi) if self.chi else 0.0
        hi = max(float(chi.max()) for chi in self.chi) if self.chi else 0.0
        report["chi_range_ok"] = bool(-1e-12 <= lo and hi <= 1 + 1e-12)
        omega_nodes = np.flatnonzero(self.cover.omega_mask)
        total = np.zeros(mesh.n_nodes)
        for chi in self.chi:
            total += chi
        report["partition_sum_err"] = float(np.abs(total[omega_nodes] - 1.0).max())
        report["eta_floor"] = float(self.eta_sum[omega_nodes].min())
        # compact support: exactly zero strictly outside each ball
        supp = 0.0
        grad_const = 0.0
        plateau = 0.0
        for b in balls:
            outside = D[b.center] > b.radius + 1e-9
            supp = max(supp, float(np.abs(self.chi[b.index][outside]).max(initial=0.0)))
            g = lp_norm_gradient(mesh, self.chi[b.index], np.inf)
            grad_const = max(grad_const, g * b.radius)
            half = D[b.center] <= 0.5 * b.radius + 1e-12
            plateau = max(plateau, float(np.abs(self.eta[b.index][half] - 1.0).max(initial=0.0)))
        report["support_violation"] = supp
        report["grad_bound_constant"] = grad_const
        report["eta_plateau_err"] = plateau
        # souls: plateau sets inside 3/4 of the ball; gradients of the
        # J-weights confined to the second-order carrier, segmentwise
        lam_ok = True
        for i, mask in self.lambda_masks.items():
            b = balls[i]
            nodes = np.flatnonzero(mask)
            lam_ok = lam_ok and bool((D[b.center, nodes] <= 0.75 * b.radius + 1e-9).all())
        report["lambda_inside_three_quarters"] = bool(lam_ok)
        j_ok = True
        for i in self.cover.J:
            carrier = self.carriers2[i]
            slopes = gradient(mesh, self.chi[i])
            for cbl, j in zip(*np.nonzero(np.abs(slopes) > 1e-12)):
                mid = (j + 0.5) / mesh.M
                if not carrier.contains(CablePoint(int(cbl), mid)):
                    j_ok = False
        report["j_gradient_on_carrier"] = bool(j_ok)
        return report


def build_partition(cover):
    """Partition of unity associated with a Whitney covering."""
    mesh = cover.mesh
    X = mesh.X
    D = mesh.distance_matrix()
    c = max(cover.c, 1.0)
    eta = []
    souls = {}
    souls2 = {}
    carriers = {}
    carriers2 = {}
    lambda_masks = {}
    for b in cover.balls:
        if b.kind == "small":
            arg = 2.0 * np.maximum(0.0, D[b.center] - 0.5 * b.radius) / b.radius
            eta.append(bump_profile(arg))
            continue
        level_raw = int(np.floor(np.log(b.radius / (8.0 * c)) / np.log(3.0) + 1e-12))
        if level_raw > X.level:
            raise MarginError(
                "soul level %d exceeds the ambient truncation %d; rebuild with "
                "ambient level >= %d" % (level_raw, X.level, level_raw)
            )
        soul = soul_adapted(X, b.point, b.radius, c, order=1)
        bsub = cover.ball_subset(b.index)
        covered = Subset([])
        for W in soul.skeletons:
            covered = covered.union(W.subset())
        if not bsub.is_subset_of(covered):
            raise MarginError(
                "ball #%d is not covered by its level-%d skeletons; the "
                "construction leaves the truncation" % (b.index, soul.level)
            )
        carrier = soul.carrier.intersect(bsub)
        # plateau: union of the same-level skeletons meeting the half ball
        lam_mask = np.zeros(mesh.n_nodes, dtype=bool)
        near = X.skeleton_distances(soul.level, b.point) <= 0.5 * b.radius + 1e-9
        for k in np.flatnonzero(near):
            lam_mask |= node_mask(mesh, X.skeleton(soul.level, int(k)).subset())
        d_lam = mesh.distances_from_set(np.flatnonzero(lam_mask)).min(axis=0)
        phi_vals = bump_profile(d_lam / (b.radius / 8.0))
        eta.append(radial_extend(mesh, carrier, phi_vals))
        souls[b.index] = soul
        carriers[b.index] = carrier
        lambda_masks[b.index] = lam_mask
        if b.in_J:
            soul2 = soul_adapted(X, b.point, b.radius, c, order=2)
            souls2[b.index] = soul2
            carriers2[b.index] = soul2.carrier.intersect(bsub)
    eta_sum = np.zeros(mesh.n_nodes)
    for e in eta:
        eta_sum += e
    chi = []
    for e in eta:
        with np.errstate(invalid="ignore", divide="ignore"):
            v = np.where(eta_sum > 0, e / np.where(eta_sum > 0, eta_sum, 1.0), 0.0)
        chi.append(v)
    return PartitionOfUnity(
        cover, eta, chi, eta_sum, souls, souls2, carriers, carriers2, lambda_masks
    )


# ---------------------------------------------------------------------------
# the decomposition
# ---------------------------------------------------------------------------


def gradient_density(mesh, u, q):
    """Nodal density of |grad u|^q: mass-weighted mean over incident segments.

    Integrating the result against the node masses reproduces the exact
    integral of |grad u|^q.
    """
    slopes = gradient(mesh, np.asarray(u, dtype=float))
    weight = np.abs(slopes).ravel() ** q * (mesh.h / 2.0)
    num = np.zeros(mesh.n_nodes)
    np.add.at(num, mesh.seg_a, weight)
    np.add.at(num, mesh.seg_b, weight)
    return num / mesh.mass


class CZDecomposition:
    """Result of the Sobolev Calderon-Zygmund split ``u = g + sum b_i``."""

    def __init__(self, u, lam, q, cover, partition, g, bs, centers_used):
        self.u = u
        self.lam = float(lam)
        self.q = float(q)
        self.cover = cover
        self.partition = partition
        self.g = g
        self.bs = bs
        self.centers_used = centers_used  # i -> the constant c_i
        self._report = None

    @property
    def trivial(self):
        return self.cover is None

    def verify(self):
        if self._report is not None:
            return self._report
        mesh = self.u.mesh
        u = np.asarray(self.u.values, dtype=float)
        q, lam = self.q, self.lam
        report = {}
        total_grad = lp_norm_gradient(mesh, u, q) ** q
        if self.trivial:
            report["trivial"] = True
            report["reconstruction_err"] = 0.0
            report["grad_g_lq_ratio"] = 1.0
            report["grad_g_sup_over_lambda"] = (
                lp_norm_gradient(mesh, u, np.inf) / lam if lam > 0 else np.inf
            )
            self._report = report
            return report
        report["trivial"] = False
        D = mesh.distance_matrix()
        balls = self.cover.balls
        recon = u - np.asarray(self.g.values, dtype=float)
        for b in self.bs:
            recon -= b.values
        report["reconstruction_err"] = float(np.abs(recon).max())
        supp = 0.0
        c3 = []
        c3_grad = []
        c3_energy = []
        sum_measure = 0.0
        per_ball = []
        for b in balls:
            bi = np.asarray(self.bs[b.index].values, dtype=float)
            outside = D[b.center] > b.radius + 1e-9
            supp = max(supp, float(np.abs(bi[outside]).max(initial=0.0)))
            S = self.cover.ball_subset(b.index)
            m_ball = S.measure()
            sum_measure += m_ball
            energy = lp_norm_gradient(mesh, u, q, S=S) ** q
            b_mass = lp_integral(mesh, bi, q, S=S)
            b_energy = lp_norm_gradient(mesh, bi, q) ** q
            scale = max(b.radius ** (ALPHA + q - 1), b.radius**q)
            r3 = b_mass / (scale * energy) if energy > 0 else (0.0 if b_mass <= 1e-20 else np.inf)
            r3g = b_energy / energy if energy > 0 else (0.0 if b_energy <= 1e-20 else np.inf)
            r3e = energy / (lam**q * m_ball)
            c3.append(r3)
            c3_grad.append(r3g)
            c3_energy.append(r3e)
            per_ball.append(
                {
                    "index": b.index,
                    "radius": b.radius,
                    "kind": b.kind,
                    "in_J": b.in_J,
                    "c_i": self.centers_used[b.index],
                    "measure": m_ball,
                    "energy": energy,
                    "b_mass_ratio": r3,
                    "b_energy_ratio": r3g,
                    "energy_density_ratio": r3e,
                }
            )
        report["support_violation"] = supp
        report["b_mass_constant"] = float(max(c3)) if c3 else 0.0
        report["b_energy_constant"] = float(max(c3_grad)) if c3_grad else 0.0
        report["energy_density_constant"] = float(max(c3_energy)) if c3_energy else 0.0
        report["measure_sum_constant"] = float(sum_measure * lam**q / total_grad)
        report["overlap_N"] = self.cover.overlap
        report["comparability_c"] = self.cover.c
        g_vals = np.asarray(self.g.values, dtype=float)
        report["grad_g_lq_ratio"] = float(
            lp_norm_gradient(mesh, g_vals, q) / total_grad ** (1.0 / q)
        )
        report["grad_g_sup_over_lambda"] = float(lp_norm_gradient(mesh, g_vals, np.inf) / lam)
        report["per_ball"] = per_ball
        report.update({("covering_" + k): v for k, v in self.cover.verify().items()})
        report.update({("partition_" + k): v for k, v in self.partition.verify().items()})
        self._report = report
        return report

    def to_json(self):
        rep = dict(self.verify())
        rep["lambda"] = self.lam
        rep["q"] = self.q
        if not self.trivial:
            rep["covering"] = self.cover.to_json()
        return json.loads(json.dumps(rep, default=float))


def cz_decompose(u, lam, q=2.0):
    """Sobolev Calderon-Zygmund decomposition of ``u`` at threshold ``lam``.

    The bad set is the node set where the maximal function of |grad u|^q
    exceeds ``lam**q``.  Souled constants are used on the J balls (mean over
    the second-order carrier), plain ball means elsewhere.
    """
    if lam <= 0:
        raise ValueError("threshold must be positive")
    if not 1.0 <= q:
        raise ValueError("q must be at least 1")
    mesh = u.mesh
    X = mesh.X
    density = gradient_density(mesh, u.values, q)
    maxfn = maximal_function(MeshFunction(mesh, density))
    omega = maxfn.values > lam**q
    if not omega.any():
        return CZDecomposition(u, lam, q, None, None, u, [], {})
    corners = X.central_skeleton(X.level).corners()
    for coords in corners:
        if omega[X.vertex_id(coords)]:
            raise MarginError(
                "the bad set reaches the truncation corners; rebuild with "
                "ambient level >= %d" % (X.level + 1)
            )
    cover = whitney_cover(mesh, omega)
    partition = build_partition(cover)
    u_vals = np.asarray(u.values, dtype=float)
    bs = []
    centers_used = {}
    g_vals = u_vals.copy()
    for b in cover.balls:
        if b.in_J:
            c_i = mean_over(mesh, u_vals, partition.carriers2[b.index])
        else:
            c_i = mean_over(mesh, u_vals, cover.ball_subset(b.index))
        centers_used[b.index] = float(c_i)
        b_vals = (u_vals - c_i) * partition.chi[b.index]
        bs.append(MeshFunction(mesh, b_vals))
        g_vals -= b_vals
    g = MeshFunction(mesh, g_vals)
    return CZDecomposition(u, lam, q, cover, partition, g, bs, centers_used)


# ---------------------------------------------------------------------------
# per-ball Poincare diagnostics
# ---------------------------------------------------------------------------


def poincare_on_covering_ball(u, center, radius, q=2.0, soul_order=1, c=2.0):
    """Both Poincare left sides on a ball, sharing one souled constant.

    Returns a dict with the ball-against-ball and carrier-against-ball
    integrals, the shared constant, and the two scale-normalized ratios
    (ball left side against r^(alpha+q-1), carrier left side against r^q).
    """
    mesh = u.mesh
    X = mesh.X
    point = X.as_point(center)
    B = ball(X, point, radius)
    soul = soul_adapted(X, point, radius, c, order=soul_order)
    carrier = soul.carrier.intersect(B)
    if carrier.is_empty():
        raise ValueError("the soul carrier misses the ball")
    vals = np.asarray(u.values, dtype=float)
    c_f = mean_over(mesh, vals, carrier)
    lhs_ball = lp_integral(mesh, vals - c_f, q, S=B)
    lhs_soul = lp_integral(mesh, vals - c_f, q, S=carrier)
    rhs = lp_norm_gradient(mesh, vals, q, S=B) ** q
    scale_ball = radius ** (ALPHA + q - 1)
    scale_soul = radius**q
    return {
        "lhs_ball": float(lhs_ball),
        "lhs_soul": float(lhs_soul),
        "rhs": float(rhs),
        "constant": float(c_f),
        "ratio_ball": float(lhs_ball / (scale_ball * rhs)) if rhs > 0 else 0.0,
        "ratio_soul": float(lhs_soul / (scale_soul * rhs)) if rhs > 0 else 0.0,
    }
