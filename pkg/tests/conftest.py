"""Shared fixtures: one lab and one acceptance sweep per test session."""

import pytest

from vicseklab.acceptance import run_checks
from vicseklab.config import load_config
from vicseklab.experiments import Lab


@pytest.fixture(scope="session")
def session_lab():
    return Lab()


@pytest.fixture(scope="session")
def acceptance(session_lab):
    """All acceptance checks, run once on the shipped default config.

    The host environment is ignored so locally exported VF_ overrides
    cannot change what the suite certifies.
    """
    cfg = load_config(environ={})
    return {res.cid: res for res in run_checks(session_lab, cfg)}
