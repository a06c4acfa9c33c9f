"""Experiment-layer tests on small systems; heavy runs live in the acceptance suite."""

import numpy as np
import pytest

from vicseklab.experiments import (
    ALPHA,
    BETA,
    Lab,
    ambient_for,
    annulus_decay,
    annulus_fixture,
    build_tent,
    failure_mechanism,
    fit_loglog,
    gradient_isometry,
    growth_exponent,
    harmonic_extend,
    harnack_gradient,
    heat_decay,
    heat_retention,
    interpolation_check,
    nash_exponent,
    nash_point,
    nash_scan,
    p_crossover,
    phase_point,
    phase_scan,
    poincare_constants,
    poincare_empirical,
    poincare_report,
    rr_ratio,
    small_time_bound,
    tent_gradient_power,
    tent_report,
    truncation_sensitivity,
    volume_scaling,
)
from vicseklab.mesh import (
    integration_weights,
    lp_norm,
    lp_norm_gradient,
    node_mask,
)


@pytest.fixture(scope="module")
def lab():
    return Lab()


# -- fits and closed-form exponents -----------------------------------------


def test_fit_loglog_exact_power_law():
    x = np.logspace(0, 2, 12)
    fit = fit_loglog(x, 3.0 * x**1.7)
    assert abs(fit["slope"] - 1.7) < 1e-12
    assert abs(fit["intercept"] - np.log10(3.0)) < 1e-12
    assert fit["residual"] < 1e-13
    assert fit["valid"]


def test_fit_loglog_flags_bad_fit():
    x = np.array([1.0, 10.0, 100.0, 1000.0])
    y = np.array([1.0, 100.0, 1.0, 100.0])
    fit = fit_loglog(x, y)
    assert fit["residual"] > 0.15
    assert not fit["valid"]


def test_crossover_pins():
    assert p_crossover(0.5) == pytest.approx(2.0, abs=1e-12)
    assert p_crossover(0.55) == pytest.approx((ALPHA - 1.0) / (0.55 * BETA - 1.0))
    assert p_crossover(ALPHA / BETA) == pytest.approx(1.0, abs=1e-12)
    assert p_crossover(0.2) == np.inf


def test_growth_exponent_signs():
    assert growth_exponent(0.5, 1.1) > 0.15
    assert growth_exponent(0.5, 3.0) < 0.0
    # threshold: exponent vanishes exactly at p = p*(gamma)
    assert growth_exponent(0.5, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert growth_exponent(0.58, p_crossover(0.58)) == pytest.approx(0.0, abs=1e-12)


def test_nash_exponent_formula():
    x = nash_exponent(0.5, 2.0)
    assert x == pytest.approx(2.0 * 0.5 * 2.0 / (1.0 * 2.0 * ALPHA / BETA))


# -- tents ------------------------------------------------------------------


def test_build_tent_rejects_bad_levels(lab):
    mesh = lab.mesh(2, 2)
    with pytest.raises(ValueError):
        build_tent(mesh, 2)
    with pytest.raises(ValueError):
        build_tent(mesh, 0)


def test_tent_values_and_gradient(lab):
    mesh = lab.mesh(3, 4)
    X = mesh.X
    g = build_tent(mesh, 2)
    assert g.values[mesh.vertex_node(X.root)] == 1.0
    for c in X.central_skeleton(2).corners():
        assert g.values[mesh.vertex_node(X.vertex_id(c))] == 0.0
    for p in (1.1, 2.0, 3.0):
        got = lp_norm_gradient(mesh, g.values, p) ** p
        assert got == pytest.approx(tent_gradient_power(2, p), rel=1e-12)
    # constant on branches: the pointwise bound on the inner third is exact
    inner = node_mask(mesh, X.central_skeleton(1).subset())
    assert g.values[inner].min() >= 2.0 / 3.0 - 1e-14


def test_tent_report_thresholds(lab):
    rep = tent_report(lab, 1)
    assert rep["gradient_power_rel_err"] < 1e-12
    assert rep["inner_min"] >= 2.0 / 3.0 - 1e-14
    assert rep["outside_max"] == 0.0
    assert rep["harmonic_residual"] < 1e-10


# -- volume scaling ---------------------------------------------------------


def test_volume_scaling_small_system(lab):
    rep = volume_scaling(lab, level=3, n_centers=10, seed=3)
    assert len(rep["radii"]) == len(rep["volumes"][0])
    assert rep["radii"][-1] <= 2.0 * 27.0 / 4.0
    assert 1.0 < rep["alpha_hat"] < 2.0
    assert rep["residual"] < 0.1


# -- Poincare constants -----------------------------------------------------


def test_poincare_constant_is_an_upper_bound(lab):
    mesh = lab.mesh(1, 4)
    X = lab.system(1)
    rep = poincare_constants(lab, 1)
    diag = X.central_skeleton(1).diag()
    w = integration_weights(mesh, diag)
    w = w / w.sum()
    rng = np.random.default_rng(8)
    for _ in range(200):
        f = rng.standard_normal(mesh.n_nodes)
        c = w @ f
        num_full = lp_norm(mesh, f - c, 2.0) ** 2
        num_diag = lp_norm(mesh, f - c, 2.0, S=diag) ** 2
        den = lp_norm_gradient(mesh, f, 2.0) ** 2
        assert num_full <= rep["constant_full"] * den * (1 + 1e-9)
        assert num_diag <= rep["constant_diag"] * den * (1 + 1e-9)


def test_poincare_constant_mesh_convergence(lab):
    c2 = poincare_constants(lab, 1, M=2)
    c4 = poincare_constants(lab, 1, M=4)
    assert c2["constant_full"] == pytest.approx(c4["constant_full"], rel=0.02)
    assert c2["constant_diag"] == pytest.approx(c4["constant_diag"], rel=0.02)


def test_poincare_report_scaling(lab):
    rep = poincare_report(lab, n_max=2)
    assert rep["dlog_full"][0] == pytest.approx(np.log(15.0), abs=0.27)
    assert rep["dlog_diag"][0] == pytest.approx(np.log(9.0), rel=0.10)


def test_poincare_empirical_dominates_tent(lab):
    mesh = lab.mesh(2, 4)
    X = lab.system(2)
    rep = poincare_empirical(lab, 2, 3.0)
    diag = X.central_skeleton(2).diag()
    w = integration_weights(mesh, diag)
    w = w / w.sum()
    d = mesh.distances_from(mesh.vertex_node(X.root))
    from vicseklab.mesh import radial_extend

    f = radial_extend(mesh, diag, np.maximum(0.0, 1.0 - d / 9.0))
    c = w @ f
    ratio = lp_norm(mesh, f - c, 3.0) ** 3 / lp_norm_gradient(mesh, f, 3.0) ** 3
    assert rep["best_ratio"] >= ratio * (1 - 1e-12)
    assert np.isfinite(rep["best_ratio"])


# -- heat decay -------------------------------------------------------------


def test_heat_decay_small(lab):
    rep = heat_decay(lab, level=3, M=2, n_times=15)
    assert rep["window"][1] == pytest.approx(3.0 ** (3 * BETA) / 10.0)
    assert rep["mass_drift"] < 1e-10
    assert -0.9 < rep["slope"] < -0.45
    assert rep["dt_slope"] == pytest.approx(-(1.0 + ALPHA / BETA), abs=0.12)
    assert rep["fit"]["valid"] and rep["fit_dt"]["valid"]


def test_heat_decay_requires_dense(lab):
    from vicseklab.spectral import eigendecompose

    partial = Lab()
    partial._bases[(2, 2)] = eigendecompose(
        partial.pair(2, 2), mesh=partial.mesh(2, 2), k_max=10
    )
    with pytest.raises(ValueError):
        heat_decay(partial, level=2, M=2)


def test_heat_retention_core(lab):
    rep = heat_retention(lab, scale=1)
    assert rep["min_on_core"] >= 0.1
    assert rep["max_anywhere"] <= 1.0 + 1e-12


# -- phase scan -------------------------------------------------------------


def test_rr_ratio_positive_and_cached(lab):
    r1 = rr_ratio(lab, 1, 0.5, 2.0)
    r2 = rr_ratio(lab, 1, 0.5, 2.0)
    assert r1 == r2
    assert r1 > 0


def test_phase_point_verdicts(lab):
    pt = phase_point(lab, 0.5, 1.1, levels=(1, 2))
    assert pt["p_star"] == pytest.approx(2.0)
    assert pt["side_of_threshold"] == "below"
    factor = np.exp(np.log(pt["ratios"][1] / pt["ratios"][0]))
    assert pt["growth_factor"] == pytest.approx(factor)
    near = phase_point(lab, 0.5, 1.98, levels=(1, 2))
    assert near["verdict"] == "no-verdict"
    assert near["consistent"] is None


def test_phase_scan_shape(lab):
    rep = phase_scan(lab, [0.5], [1.5, 2.5], levels=(1, 2))
    assert len(rep["points"]) == 2
    gammas = {pt["gamma"] for pt in rep["points"]}
    assert gammas == {0.5}


def test_phase_scan_workers_match_serial(lab):
    serial = phase_scan(lab, [0.5], [1.5, 2.5], levels=(1, 2), workers=1)
    threaded = phase_scan(lab, [0.5], [1.5, 2.5], levels=(1, 2), workers=2)
    for a, b in zip(serial["points"], threaded["points"]):
        assert a["ratios"] == b["ratios"]


# -- Nash -------------------------------------------------------------------


def test_nash_point_fields(lab):
    pt = nash_point(lab, 0.5, 2.0, 2)
    assert pt["precondition_ok"]
    assert pt["slack"] > 0
    assert pt["norm_p"] <= pt["norm_1"]


def test_nash_scan_collects_grid(lab):
    rep = nash_scan(lab, gammas=(0.4, 0.6), ps=(1.5, 2.0), levels=(1, 2))
    assert len(rep["points"]) == 8
    assert rep["max_slack"] is not None and rep["max_slack"] > 0


def test_failure_mechanism_direction(lab):
    rep = failure_mechanism(lab, 0.5, 1.1, levels=(1, 2))
    assert rep["expected_factor"] > 1.1
    rows = rep["rows"]
    assert rows[0]["grad_p"] == pytest.approx(
        tent_gradient_power(1, 1.1) ** (1 / 1.1)
    )
    assert all(r["lower_bound"] > 0 for r in rows)


# -- interpolation and isometry ---------------------------------------------


def test_interpolation_p2_is_sharp(lab):
    rep = interpolation_check(lab, 0.3, 0.7, 0.5)
    assert rep["max_slack"] <= 1.0 + 1e-9
    assert rep["eigenmode_slack"] == pytest.approx(1.0, abs=1e-10)


def test_interpolation_theta_one_is_identity(lab):
    rep = interpolation_check(lab, 0.3, 0.7, 1.0)
    assert rep["max_slack"] == pytest.approx(1.0, abs=1e-12)


def test_gradient_isometry_tight(lab):
    rep = gradient_isometry(lab, n_samples=10)
    assert rep["max_rel_err"] < 1e-8


# -- annulus decay ----------------------------------------------------------


def test_annulus_fixture_support(lab):
    b, B = annulus_fixture(lab, 3, level=4, M=1)
    mesh = lab.mesh(4, 1)
    inside = node_mask(mesh, B)
    assert np.abs(b.values[~inside]).max() == 0.0
    assert np.abs(b.values).max() > 0


def test_annulus_decay_small(lab):
    rep = annulus_decay(lab, radii=(3, 9), level=4, M=1)
    for row in rep["rows"]:
        assert row["tail_constant"] >= 0
        assert row["smooth_constant"] < 10.0
    assert np.isfinite(rep["tail_spread"])


# -- small-time bound -------------------------------------------------------


def test_small_time_bound_monotone(lab):
    lo = small_time_bound(lab, r=0.5)
    hi = small_time_bound(lab, r=1.0)
    assert lo["sup_ratio"] <= hi["sup_ratio"] + 1e-12
    assert hi["sup_ratio"] < 10.0


# -- harmonic gradient bound ------------------------------------------------


def test_harmonic_extend_constant_data(lab):
    mesh = lab.mesh(2, 2)
    K = lab.pair(2, 2).K
    d = mesh.distances_from(mesh.vertex_node(mesh.X.root))
    inside = d < 3.0 - 1e-9
    boundary = ~inside & (d <= 3.0 + 1e-9)
    data = np.ones(mesh.n_nodes)
    u = harmonic_extend(mesh, K, inside, boundary, data)
    assert np.allclose(u[inside | boundary], 1.0, atol=1e-12)


def test_harnack_gradient_fixture(lab):
    rep = harnack_gradient(lab, r=3.0, level=3, M=2, n_samples=3)
    # constant boundary data (first sample) gives a constant function
    assert rep["ratios"][0] == pytest.approx(0.0, abs=1e-9)
    assert rep["max_ratio"] < 100.0


# -- truncation sensitivity -------------------------------------------------


def test_truncation_sensitivity_small(lab):
    rep = truncation_sensitivity(lab, n=1)
    assert abs(rep["dlog10"]) < 0.15


# -- lab caching ------------------------------------------------------------


def test_lab_reuses_objects(lab):
    assert lab.mesh(2, 4) is lab.mesh(2, 4)
    assert lab.basis(2, 4) is lab.basis(2, 4)
    assert lab.tent(1, 2, 4) is lab.tent(1, 2, 4)


def test_ambient_policy():
    assert ambient_for(1) == (2, 8)
    assert ambient_for(4) == (5, 1)
    with pytest.raises(ValueError):
        ambient_for(5)
