"""Covering, partition and decomposition machinery tests."""

import json

import numpy as np
import pytest

from vicseklab.czdecomp import (
    CoverBall,
    Covering,
    MarginError,
    build_partition,
    bump_profile,
    cz_decompose,
    gradient_density,
    maximal_function,
    poincare_on_covering_ball,
    suggest_lambdas,
    whitney_cover,
)
from vicseklab.geometry import Subset, build_vicsek
from vicseklab.mesh import MeshFunction, discretize, lp_norm_gradient, node_mask


@pytest.fixture(scope="module")
def setup3():
    X = build_vicsek(2, 3)
    mesh = discretize(X, 2)
    return X, mesh


@pytest.fixture(scope="module")
def setup4():
    X = build_vicsek(2, 4)
    mesh = discretize(X, 1)
    return X, mesh


def tent(mesh, n):
    """Height-one tent of radius 3^n around the origin."""
    X = mesh.X
    d = mesh.distances_from(mesh.vertex_node(X.root))
    return MeshFunction(mesh, np.maximum(0.0, 1.0 - d / 3.0**n))


# -- bump profile -----------------------------------------------------------


def test_bump_profile_shape():
    assert bump_profile(0.0) == 1.0
    assert bump_profile(1.0) == 0.0
    assert bump_profile(2.5) == 0.0
    grid = np.linspace(0, 1, 101)
    vals = bump_profile(grid)
    assert np.all(np.diff(vals) <= 1e-12)
    assert np.all((0.0 <= vals) & (vals <= 1.0))


# -- maximal function -------------------------------------------------------


def test_maximal_of_constant(setup3):
    _, mesh = setup3
    out = maximal_function(MeshFunction(mesh, np.ones(mesh.n_nodes)))
    assert np.allclose(out.values, 1.0, atol=1e-12)


def test_maximal_monotone(setup3):
    _, mesh = setup3
    rng = np.random.default_rng(5)
    w1 = rng.uniform(0, 1, mesh.n_nodes)
    w2 = w1 + rng.uniform(0, 1, mesh.n_nodes)
    m1 = maximal_function(MeshFunction(mesh, w1)).values
    m2 = maximal_function(MeshFunction(mesh, w2)).values
    assert np.all(m1 <= m2 + 1e-12)
    assert np.all(m1 >= 0)


def test_maximal_brute_force_oracle():
    X = build_vicsek(2, 1)
    mesh = discretize(X, 2)
    rng = np.random.default_rng(11)
    w = rng.uniform(0, 2, mesh.n_nodes)
    got = maximal_function(MeshFunction(mesh, w)).values
    D = mesh.distance_matrix()
    expected = np.zeros(mesh.n_nodes)
    rho = mesh.h
    while True:
        for c in range(mesh.n_nodes):
            members = D[c] <= rho + 1e-9
            avg = np.dot(mesh.mass[members], w[members]) / mesh.mass[members].sum()
            expected[members] = np.maximum(expected[members], avg)
        if rho >= D.max():
            break
        rho *= 2
    assert np.allclose(got, expected, atol=1e-12)


def test_maximal_dominates_ball_averages(setup3):
    _, mesh = setup3
    rng = np.random.default_rng(7)
    w = rng.uniform(0, 1, mesh.n_nodes)
    out = maximal_function(MeshFunction(mesh, w)).values
    D = mesh.distance_matrix()
    for c in (0, 17, 501):
        members = D[c] <= 4 * mesh.h + 1e-9
        avg = np.dot(mesh.mass[members], w[members]) / mesh.mass[members].sum()
        assert np.all(out[members] >= avg - 1e-12)


def test_maximal_localized_mass_decays(setup3):
    _, mesh = setup3
    w = np.zeros(mesh.n_nodes)
    cable_nodes = mesh.cable_nodes[0]
    w[cable_nodes] = 1.0
    out = maximal_function(MeshFunction(mesh, w)).values
    d = mesh.distances_from_set(cable_nodes).min(axis=0)
    far = d > 18
    assert far.any()
    assert out[far].max() <= 0.1 * out.max()
    assert out.min() > 0


def test_maximal_rejects_negative(setup3):
    _, mesh = setup3
    with pytest.raises(ValueError):
        maximal_function(MeshFunction(mesh, -np.ones(mesh.n_nodes)))


def test_gradient_density_integrates_exactly(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    for q in (1.0, 1.5, 2.0):
        dens = gradient_density(mesh, u.values, q)
        total = np.dot(mesh.mass, dens)
        assert abs(total - lp_norm_gradient(mesh, u.values, q) ** q) <= 1e-12 * max(total, 1)


def test_suggest_lambdas(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lams = suggest_lambdas(maxfn, 2.0, (0.3, 0.6, 0.9))
    assert len(lams) == 3
    assert all(a < b for a, b in zip(lams, lams[1:]))
    with pytest.raises(ValueError):
        suggest_lambdas(MeshFunction(mesh, np.zeros(mesh.n_nodes)), 2.0)


# -- Whitney covering -------------------------------------------------------


def test_whitney_rejects_degenerate(setup3):
    _, mesh = setup3
    with pytest.raises(ValueError):
        whitney_cover(mesh, np.zeros(mesh.n_nodes, dtype=bool))
    with pytest.raises(ValueError):
        whitney_cover(mesh, np.ones(mesh.n_nodes, dtype=bool))


def test_whitney_single_cable_interior():
    X = build_vicsek(2, 1)
    mesh = discretize(X, 4)
    omega = Subset([(0, 0.25, 0.75)])
    cover = whitney_cover(mesh, omega)
    assert all(b.kind == "small" for b in cover.balls)
    rep = cover.verify()
    assert rep["cores_disjoint"]
    assert rep["halves_cover_omega"]
    assert rep["vitali_certificate"]
    assert rep["dilates_touch_complement"]
    assert rep["radius_consistency"]


def test_whitney_tent_axioms(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lam_q = float(np.quantile(maxfn.values[maxfn.values > 0], 0.75))
    cover = whitney_cover(mesh, maxfn.values > lam_q)
    assert len(cover.balls) > 1
    rep = cover.verify()
    for key in (
        "cores_disjoint",
        "halves_cover_omega",
        "vitali_certificate",
        "balls_inside_omega",
        "dilates_touch_complement",
        "radius_consistency",
    ):
        assert rep[key], key
    assert rep["comparability_c"] >= 1.0
    assert rep["overlap_N"] >= 1


# -- partition of unity -----------------------------------------------------


def _synthetic_covering(mesh, specs):
    """Covering with prescribed (center_node, radius) balls for axiom tests."""
    dist_f = np.zeros(mesh.n_nodes)
    balls = []
    for i, (center, radius) in enumerate(specs):
        dist_f[center] = 3.0 * radius
        balls.append(CoverBall(i, center, mesh.node_point(center), radius, radius / 10.0))
    D = mesh.distance_matrix()
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    for center, radius in specs:
        mask |= D[center] < 0.5 * radius
    return Covering(mesh, balls, mask, dist_f, {})


def test_partition_single_big_ball_is_trivial(setup4):
    X, mesh = setup4
    cover = _synthetic_covering(mesh, [(mesh.vertex_node(X.root), 24.0)])
    assert cover.balls[0].in_J
    pou = build_partition(cover)
    omega = np.flatnonzero(cover.omega_mask)
    assert np.allclose(pou.chi[0][omega], 1.0, atol=0)
    rep = pou.verify()
    assert rep["chi_range_ok"]
    assert rep["partition_sum_err"] == 0.0
    assert rep["support_violation"] == 0.0
    assert rep["eta_plateau_err"] == 0.0
    assert rep["lambda_inside_three_quarters"]
    assert rep["j_gradient_on_carrier"]


def test_partition_two_big_balls_soul_support(setup4):
    X, mesh = setup4
    other = X.vertex_id((6, 6))
    cover = _synthetic_covering(
        mesh, [(mesh.vertex_node(X.root), 28.0), (mesh.vertex_node(other), 26.0)]
    )
    assert len(cover.J) == 2
    assert cover.c == pytest.approx(28.0 / 26.0)
    pou = build_partition(cover)
    rep = pou.verify()
    assert rep["chi_range_ok"]
    assert rep["partition_sum_err"] <= 1e-12
    assert rep["eta_floor"] >= 1.0 - 1e-12
    assert rep["support_violation"] == 0.0
    assert rep["lambda_inside_three_quarters"]
    # the heart of the construction: all variation of the J-ball weights
    # happens on the second-order diagonal carrier
    assert rep["j_gradient_on_carrier"]
    # no gradient-constant assertion here: the synthetic fixture covers the
    # open set with half-balls only, so the full balls exit it and the
    # normalization is allowed to be steep near their edges (a real Whitney
    # covering keeps its balls inside the open set; see the fixtures below)


def test_partition_small_balls(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lam_q = float(np.quantile(maxfn.values[maxfn.values > 0], 0.85))
    cover = whitney_cover(mesh, maxfn.values > lam_q)
    pou = build_partition(cover)
    rep = pou.verify()
    assert rep["chi_range_ok"]
    assert rep["partition_sum_err"] <= 1e-12
    assert rep["eta_floor"] >= 1.0 - 1e-12
    assert rep["support_violation"] == 0.0
    assert rep["grad_bound_constant"] < 25.0


# -- the decomposition ------------------------------------------------------


def test_cz_trivial_above_supremum(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lam = 10.0 * float(maxfn.values.max()) ** 0.5
    dec = cz_decompose(u, lam, q=2.0)
    assert dec.trivial
    assert dec.bs == []
    rep = dec.verify()
    assert rep["trivial"]
    assert rep["reconstruction_err"] == 0.0


def test_cz_margin_error_at_corner(setup3):
    X, mesh = setup3
    corner = X.vertex_id((27, 27))
    d = mesh.distances_from(mesh.vertex_node(corner))
    u = MeshFunction(mesh, np.maximum(0.0, 1.0 - d / 9.0))
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lam = 0.5 * float(maxfn.values[corner]) ** 0.5
    with pytest.raises(MarginError):
        cz_decompose(u, lam, q=2.0)


def test_cz_rejects_bad_arguments(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    with pytest.raises(ValueError):
        cz_decompose(u, 0.0)
    with pytest.raises(ValueError):
        cz_decompose(u, 1.0, q=0.5)


def test_cz_tent_fixture_properties(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lams = suggest_lambdas(maxfn, 2.0, (0.6, 0.8, 0.9))
    sum_constants = []
    for lam in lams:
        dec = cz_decompose(u, lam, q=2.0)
        assert not dec.trivial
        rep = dec.verify()
        assert rep["reconstruction_err"] <= 1e-12
        assert rep["support_violation"] == 0.0
        assert rep["covering_cores_disjoint"]
        assert rep["covering_halves_cover_omega"]
        assert rep["covering_vitali_certificate"]
        assert rep["covering_balls_inside_omega"]
        assert rep["partition_partition_sum_err"] <= 1e-12
        assert rep["partition_support_violation"] == 0.0
        for key in (
            "b_mass_constant",
            "b_energy_constant",
            "energy_density_constant",
            "measure_sum_constant",
            "grad_g_lq_ratio",
            "grad_g_sup_over_lambda",
        ):
            assert np.isfinite(rep[key]), key
        sum_constants.append(rep["measure_sum_constant"])
    # threshold-uniformity of the total-measure bound across the sweep
    assert max(sum_constants) <= 50.0 * min(sum_constants)


def test_cz_other_exponent(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    q = 1.5
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, q)))
    lam = suggest_lambdas(maxfn, q, (0.8,))[0]
    dec = cz_decompose(u, lam, q=q)
    rep = dec.verify()
    assert rep["reconstruction_err"] <= 1e-12
    assert rep["support_violation"] == 0.0
    assert np.isfinite(rep["b_mass_constant"])
    assert np.isfinite(rep["grad_g_sup_over_lambda"])


def test_cz_json_round_trip(setup3):
    _, mesh = setup3
    u = tent(mesh, 2)
    maxfn = maximal_function(MeshFunction(mesh, gradient_density(mesh, u.values, 2.0)))
    lam = suggest_lambdas(maxfn, 2.0, (0.8,))[0]
    dec = cz_decompose(u, lam, q=2.0)
    blob = json.dumps(dec.to_json())
    back = json.loads(blob)
    assert back["lambda"] == pytest.approx(lam)
    assert back["covering"]["balls"]
    assert "overlap_N" in back


# -- per-ball Poincare ------------------------------------------------------


def test_poincare_ball_constant_function(setup3):
    _, mesh = setup3
    u = MeshFunction(mesh, np.full(mesh.n_nodes, 3.7))
    out = poincare_on_covering_ball(u, mesh.X.root, 9.0)
    assert out["lhs_ball"] <= 1e-20
    assert out["lhs_soul"] <= 1e-20
    assert out["rhs"] == 0.0


def test_poincare_ball_tent_sweep(setup3):
    _, mesh = setup3
    for n in (1, 2, 3):
        u = tent(mesh, n)
        for order in (1, 2):
            out = poincare_on_covering_ball(u, mesh.X.root, 3.0**n, q=2.0, soul_order=order)
            assert out["rhs"] > 0
            assert 0 < out["ratio_ball"] < 10.0
            assert 0 < out["ratio_soul"] < 10.0
