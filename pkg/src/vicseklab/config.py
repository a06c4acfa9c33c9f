"""Run configuration: defaults, profiles, environment/file/flag overrides.

A configuration is a plain nested dict validated against the DEFAULTS
schema.  Merge precedence (lowest to highest): defaults, profile overlay,
``VF_``-prefixed environment variables, a JSON config file, repeated
``--set dotted.key=value`` flags.  The sha256 hash of the canonical JSON
rendering is embedded in every artifact for provenance.
"""

import copy
import hashlib
import json
import os


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


DEFAULTS = {
    "profile": "default",
    "seed": 2024,
    "workers": 1,
    "figures": True,
    "system": {"N": 2, "level": 4, "mesh_m": 2},
    "spectrum": {"level": 2, "mesh_m": 4, "k_max": 500},
    "volume": {"level": 4, "centers": 20},
    "poincare": {"n_max": 4, "mesh_m": 4, "q_extra": [1.5, 3.0]},
    "heat": {"level": 4, "mesh_m": 2, "n_times": 25, "retention_scale": 2},
    "phase": {
        "gammas": [0.5, 0.58],
        "ps": [1.01, 1.1, 1.3, 2.0, 3.0],
        "levels": [1, 2, 3, 4],
        "grow_at": 1.15,
        "flat_at": 1.05,
    },
    "nash": {
        "gammas": [0.4, 0.5, 0.6],
        "ps": [1.5, 2.0, 3.0],
        "levels": [1, 2, 3, 4],
    },
    "cz": {
        "level": 4,
        "mesh_m": 2,
        "fixtures": ["tent2", "tent3", "smoothed_noise"],
        "n_lambdas": 5,
        "q": 2.0,
    },
    "annulus": {"level": 5, "mesh_m": 1, "gamma": 0.5, "q": 2.0, "radii": [3, 9, 27]},
    "interpolation": {"gamma": 0.3, "mu": 0.7, "theta": 0.5, "p": 2.0},
    "eps_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
    "tolerances": {
        "volume_alpha": 0.1,
        "volume_residual": 0.05,
        "green_identity": 1e-10,
        "poincare_full_dev": 0.27,
        "poincare_diag_rel": 0.10,
        "tent_gradient_rel": 1e-12,
        "tent_harmonic": 1e-10,
        "heat_slope_dev": 0.08,
        "heat_dt_dev": 0.12,
        "heat_mass_drift": 1e-8,
        "isometry_rel": 1e-6,
        "quadrature_rel": 1e-6,
        "cz_reconstruction": 1e-10,
        "cz_spread": 3.0,
        "partition_sum": 1e-12,
        "partition_grad_bound": 25.0,
        "phase_grow_weak": 1.015,
        "nash_slack_max": 10.0,
        "annulus_spread": 3.0,
    },
}

#: cut-down sizes for smoke runs and the byte-determinism check
QUICK_PROFILE = {
    "system": {"level": 3, "mesh_m": 2},
    "spectrum": {"level": 2, "mesh_m": 2},
    "volume": {"level": 3, "centers": 8},
    "poincare": {"n_max": 2},
    "heat": {"level": 3, "n_times": 15, "retention_scale": 1},
    "phase": {"gammas": [0.5], "ps": [1.1, 2.0], "levels": [1, 2]},
    "nash": {"gammas": [0.5], "ps": [2.0], "levels": [1, 2]},
    "cz": {"level": 3, "fixtures": ["tent2"], "n_lambdas": 3},
    "annulus": {"level": 4, "radii": [3, 9]},
    # small truncations have not reached the asymptotic regime, so the two
    # exponent gates are opened up accordingly (measured: volume fit at
    # level 3 sits 0.15 below the limit exponent, heat slope 0.12 off)
    "tolerances": {"volume_alpha": 0.2, "heat_slope_dev": 0.15},
}

PROFILES = {"default": {}, "quick": QUICK_PROFILE}


def _merge(base, overlay, path=""):
    """Recursively merge overlay into base, validating against the schema."""
    for key, val in overlay.items():
        here = "%s.%s" % (path, key) if path else key
        if key not in base:
            raise ConfigError("unknown config key: %s" % here)
        cur = base[key]
        if isinstance(cur, dict):
            if not isinstance(val, dict):
                raise ConfigError("%s must be a table, got %r" % (here, val))
            _merge(cur, val, here)
        else:
            base[key] = _coerce(here, cur, val)
    return base


def _coerce(path, template, value):
    """Coerce value to the template's type, or raise with the field path."""
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise ConfigError("%s must be a boolean, got %r" % (path, value))
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool):
            raise ConfigError("%s must be an integer, got %r" % (path, value))
        if isinstance(value, (int, float)) and float(value) == int(value):
            return int(value)
        raise ConfigError("%s must be an integer, got %r" % (path, value))
    if isinstance(template, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError("%s must be a number, got %r" % (path, value))
    if isinstance(template, str):
        if isinstance(value, str):
            return value
        raise ConfigError("%s must be a string, got %r" % (path, value))
    if isinstance(template, list):
        if isinstance(value, (list, tuple)):
            return list(value)
        raise ConfigError("%s must be a list, got %r" % (path, value))
    raise ConfigError("%s has unsupported type" % path)


def _parse_scalar(text):
    """Parse an override value: JSON if it parses, bare string otherwise."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def _env_overlay(environ):
    """Collect VF_-prefixed variables into a nested overlay.

    ``VF_SEED=7`` sets seed; ``VF_PHASE__LEVELS=[1,2]`` sets phase.levels
    (double underscore separates nesting levels).
    """
    overlay = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith("VF_"):
            continue
        parts = [p.lower() for p in name[3:].split("__") if p]
        if not parts:
            continue
        node = overlay
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_scalar(raw)
    return overlay


def _set_overlay(assignments):
    """Collect --set dotted.path=value pairs into a nested overlay."""
    overlay = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError("--set expects KEY=VALUE, got %r" % item)
        key, _, raw = item.partition("=")
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError("--set expects a dotted key, got %r" % item)
        node = overlay
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_scalar(raw)
    return overlay


def _validate(cfg):
    if cfg["system"]["N"] != 2:
        raise ConfigError("system.N: only N=2 is supported")
    if not 1 <= cfg["system"]["level"] <= 5:
        raise ConfigError("system.level must lie in 1..5")
    for path in ("system.mesh_m", "poincare.mesh_m", "heat.mesh_m",
                 "cz.mesh_m", "annulus.mesh_m", "spectrum.mesh_m"):
        sec, key = path.split(".")
        if cfg[sec][key] < 1:
            raise ConfigError("%s must be >= 1" % path)
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if cfg["profile"] not in PROFILES:
        raise ConfigError("profile must be one of %s" % sorted(PROFILES))
    return cfg


def load_config(file=None, sets=(), environ=None, profile=None):
    """Build the effective configuration.

    Precedence (low to high): DEFAULTS, profile overlay, VF_ environment
    variables, the JSON file, --set assignments.  The profile may itself be
    chosen by any layer; it is resolved first from the merged layers and
    its overlay applied before re-merging them.
    """
    environ = os.environ if environ is None else environ
    env_ov = _env_overlay(environ)
    file_ov = {}
    if file:
        try:
            with open(file) as fh:
                file_ov = json.load(fh)
        except OSError as exc:
            raise ConfigError("cannot read config file %s: %s" % (file, exc))
        except json.JSONDecodeError as exc:
            raise ConfigError("config file %s is not valid JSON: %s" % (file, exc))
        if not isinstance(file_ov, dict):
            raise ConfigError("config file %s must hold a JSON object" % file)
    set_ov = _set_overlay(sets)

    chosen = profile
    for ov in (env_ov, file_ov, set_ov):
        if isinstance(ov.get("profile"), str):
            chosen = ov["profile"]
    if chosen is None:
        chosen = DEFAULTS["profile"]
    if chosen not in PROFILES:
        raise ConfigError("profile must be one of %s" % sorted(PROFILES))

    cfg = copy.deepcopy(DEFAULTS)
    cfg["profile"] = chosen
    _merge(cfg, copy.deepcopy(PROFILES[chosen]))
    for ov in (env_ov, file_ov, set_ov):
        _merge(cfg, ov)
    cfg["profile"] = chosen
    return _validate(cfg)


def config_hash(cfg):
    """First 16 hex digits of the sha256 of the canonical JSON rendering."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
