"""Configuration resolution: precedence, coercion, validation, hashing."""

import json

import pytest

from vicseklab.config import (
    DEFAULTS,
    PROFILES,
    ConfigError,
    config_hash,
    load_config,
)


def test_defaults_resolve():
    cfg = load_config(environ={})
    assert cfg["profile"] == "default"
    assert cfg["system"] == {"N": 2, "level": 4, "mesh_m": 2}
    assert cfg["tolerances"]["volume_alpha"] == 0.1
    assert cfg["figures"] is True


def test_defaults_not_mutated():
    cfg = load_config(environ={}, sets=["seed=1", "system.level=2"])
    assert cfg["seed"] == 1
    assert DEFAULTS["seed"] == 2024
    assert DEFAULTS["system"]["level"] == 4


def test_quick_profile_overlay():
    cfg = load_config(environ={}, profile="quick")
    assert cfg["profile"] == "quick"
    assert cfg["system"]["level"] == 3
    assert cfg["phase"]["ps"] == [1.1, 2.0]
    # quick widens exactly the two pre-asymptotic exponent gates
    assert cfg["tolerances"]["volume_alpha"] == 0.2
    assert cfg["tolerances"]["heat_slope_dev"] == 0.15
    assert cfg["tolerances"]["green_identity"] == 1e-10


def test_precedence_env_file_set(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 9, "heat": {"n_times": 11}}))
    cfg = load_config(
        file=str(path),
        sets=["seed=11"],
        environ={"VF_SEED": "7", "VF_SYSTEM__LEVEL": "2"},
    )
    assert cfg["seed"] == 11  # --set beats the file beats the env
    assert cfg["heat"]["n_times"] == 11
    assert cfg["system"]["level"] == 2


def test_env_selects_profile():
    cfg = load_config(environ={"VF_PROFILE": "quick"})
    assert cfg["profile"] == "quick"
    assert cfg["system"]["level"] == 3


def test_env_parses_json_values():
    cfg = load_config(environ={"VF_PHASE__LEVELS": "[1, 2]",
                               "VF_FIGURES": "false"})
    assert cfg["phase"]["levels"] == [1, 2]
    assert cfg["figures"] is False


def test_set_parses_lists_and_bools():
    cfg = load_config(environ={}, sets=["phase.ps=[1.5, 2.5]", "figures=no"])
    assert cfg["phase"]["ps"] == [1.5, 2.5]
    assert cfg["figures"] is False


def test_unknown_key_reports_dotted_path():
    with pytest.raises(ConfigError, match="bogus"):
        load_config(environ={}, sets=["bogus=1"])
    with pytest.raises(ConfigError, match="system.bogus"):
        load_config(environ={}, sets=["system.bogus=1"])


def test_type_errors_report_field():
    with pytest.raises(ConfigError, match="system.level"):
        load_config(environ={}, sets=["system.level=abc"])
    with pytest.raises(ConfigError, match="figures"):
        load_config(environ={}, sets=["figures=maybe"])
    with pytest.raises(ConfigError, match="phase.ps"):
        load_config(environ={}, sets=["phase.ps=2.0"])


def test_scalar_section_mismatch():
    with pytest.raises(ConfigError, match="system"):
        load_config(environ={}, sets=["system=3"])


def test_validation_bounds():
    with pytest.raises(ConfigError, match="system.N"):
        load_config(environ={}, sets=["system.N=3"])
    with pytest.raises(ConfigError, match="system.level"):
        load_config(environ={}, sets=["system.level=0"])
    with pytest.raises(ConfigError, match="workers"):
        load_config(environ={}, sets=["workers=0"])
    with pytest.raises(ConfigError, match="profile"):
        load_config(environ={}, profile="nosuch")


def test_bad_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(environ={}, file=str(tmp_path / "missing.json"))
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(environ={}, file=str(path))
    path2 = tmp_path / "list.json"
    path2.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(environ={}, file=str(path2))


def test_hash_stable_and_sensitive():
    a = load_config(environ={})
    b = load_config(environ={})
    assert config_hash(a) == config_hash(b)
    c = load_config(environ={}, sets=["seed=1"])
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_resolved_config_roundtrips_as_file(tmp_path):
    cfg = load_config(environ={}, profile="quick", sets=["seed=5"])
    path = tmp_path / "resolved.json"
    path.write_text(json.dumps(cfg))
    again = load_config(environ={}, file=str(path))
    assert again == cfg


def test_profiles_registry():
    assert set(PROFILES) == {"default", "quick"}
    assert PROFILES["default"] == {}
