"""Acceptance suite: one test per numbered check, at shipped tolerances.

The full sweep runs once per session (see conftest); each test states
its verdict on one check so ``pytest -v`` prints one line per criterion.
"""

from vicseklab.acceptance import CHECKS


def _require(acceptance, cid):
    res = acceptance[cid]
    assert res.passed, "%s failed: %s" % (cid, res.details)
    return res


def test_01_exact_counts_measures_diameters(acceptance):
    res = _require(acceptance, "01-geometry")
    assert res.elapsed < res.budget


def test_02_volume_growth_exponent(acceptance):
    res = _require(acceptance, "02-volume")
    assert res.elapsed < res.budget


def test_03_stiffness_equals_dirichlet_energy(acceptance):
    res = _require(acceptance, "03-green")
    assert res.elapsed < res.budget


def test_04_poincare_constant_scaling(acceptance):
    _require(acceptance, "04-poincare")


def test_05_tent_energy_floor_harmonicity(acceptance):
    _require(acceptance, "05-tents")


def test_06_heat_decay_and_conservation(acceptance):
    _require(acceptance, "06-heat")


def test_07_multiplier_bound_and_isometry(acceptance):
    _require(acceptance, "07-multiplier")


def test_08_quadrature_matches_spectral(acceptance):
    _require(acceptance, "08-quadrature")


def test_09_cz_decomposition_all_fixtures(acceptance):
    res = _require(acceptance, "09-cz")
    for fixture, seconds in res.clock.items():
        assert seconds < 120.0, "%s sweep took %.1fs" % (fixture, seconds)


def test_10_partition_of_unity(acceptance):
    _require(acceptance, "10-partition")


def test_11_phase_separation(acceptance):
    _require(acceptance, "11-phase")


def test_12_nash_inequality_slack(acceptance):
    _require(acceptance, "12-nash")


def test_13_annulus_decay(acceptance):
    _require(acceptance, "13-annulus")


def test_14_byte_identical_reruns(acceptance):
    _require(acceptance, "14-determinism")


def test_every_registered_check_ran(acceptance):
    assert set(acceptance) == {cid for cid, _, _, _ in CHECKS}
