"""Run configuration: YAML files validated against a fixed schema.

Every leaf of ``DEFAULTS`` is a schema entry.  A user file may omit any key
except those in ``REQUIRED``; unknown keys are an error.  Frequencies are
given in Hz unless ``frequencies_are_angular`` is true, and are converted to
rad/s once, in :func:`resolve`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os

import yaml

from .exceptions import ConfigError

SCHEMA_VERSION = 1
OUTPUT_ENV = "IONLADDER_OUT"

# dotted paths of every value that is a frequency
FREQUENCY_KEYS = ("trap.omega_x", "trap.omega_y", "trap.omega_z",
                  "laser.Omega_L", "laser.omega_L", "audit.delta", "audit.gamma",
                  "audit.omega_0", "audit.omega_rf")

COUPLING_SOURCES = ("rwa", "exact", "dipolar")

REQUIRED = ("trap.omega_x", "trap.omega_y", "trap.omega_z")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "frequencies_are_angular": False,
    "rng_seed": 0,
    "threads": 1,
    "output_dir": "ionladder-out",
    "trap": {
        "omega_x": 1.43e6,
        "omega_y": 20e6,
        "omega_z": 1e6,
        "mass_amu": 39.962590863,
        "n_ions": 3,
        "n_random_seeds": 8,
        "x_cluster_tol": 0.05,
    },
    "laser": {
        # derived route: Omega_L = rabi_over_detuning |delta_y| / eta_y
        "eta_y": 0.1,
        "eta_ratio": 10.0,
        "beatnote_over_omega_y": 1.1,
        "rabi_over_detuning": 0.15,
        "theta": math.pi / 2,
        "inhibit_pair": None,
        # explicit route, used when all three are set
        "Omega_L": None,
        "omega_L": None,
        "k_L": None,
    },
    "noise": {
        "T2": 10e-3,
        "tau_over_T2": 0.1,
        "n_traj": 1000,
    },
    "dynamics": {
        "fock_cutoff": 1,
        "t_max_over_j": 1.0,
        "n_times": 401,
        "initial": ["plus", "minus", "minus"],
        "couplings": "rwa",
    },
    "ed": {
        "L": 16,
        "f2": "0.69",
        "g": "0.02:1.2:0.04",
        "mode": "scan",
        "boundary": "periodic",
        "delta_max": 4,
        "geometry": {"d": 1.0, "a": 1.0},
        "tol": 1e-10,
    },
    "errors": {
        "nbar": [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        "thermal_cutoffs": [6, 7, 8],
        "heating_ms_per_phonon": [1.0, 2.0, 5.0, 10.0],
        "heating_cutoff": 8,
        "micromotion_q": [0.0, 0.05, 0.1, 0.15, 0.2],
        "micromotion_omega_rf": 5e-3,
        "n_points": 600,
    },
    "micromotion": {
        "q": {"x": 0.2, "y": -0.2, "z": 0.0},
        "a": {"x": 0.0, "y": 0.0, "z": 0.0},
        "kappa_g": 1.0,
    },
    "audit": {
        "delta": 10e9,
        "gamma": 10e6,
        "omega_0": 1e9,
        "omega_rf": 100e6,
        "unwanted": [],
    },
}

# leaves whose default is None but which take a value of this type
NULLABLE = {
    "laser.inhibit_pair": list,
    "laser.Omega_L": float,
    "laser.omega_L": float,
    "laser.k_L": float,
}

# dict-valued leaves whose keys are data, not schema
FREE_FORM = ("micromotion.q", "micromotion.a", "ed.geometry")


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(path, value, default):
    """PyYAML reads ``1e6`` (no dot, no sign) as a string; accept it for numbers."""
    numeric = NULLABLE.get(path) is float or _is_number(default)
    if numeric and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _check_leaf(path, value, default):
    if value is None:
        if default is None:
            return
        raise ConfigError(f"{path} may not be null")
    expected = NULLABLE.get(path)
    if expected is float or _is_number(default):
        if not _is_number(value):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path} must be finite")
    elif expected is list or isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path} must be a list")
    elif isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false")
    elif isinstance(default, str):
        if not isinstance(value, (str, int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path} must be a string")


def _merge(path, user, default):
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    out = copy.deepcopy(default)
    for key, value in user.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in default:
            raise ConfigError(f"unknown key {sub}")
        if sub in FREE_FORM:
            if not isinstance(value, dict) or not all(_is_number(v) for v in value.values()):
                raise ConfigError(f"{sub} must map names to numbers")
            out[key] = {**default[key], **value}
        elif isinstance(default[key], dict):
            out[key] = _merge(sub, value, default[key])
        else:
            value = _coerce(sub, value, default[key])
            _check_leaf(sub, value, default[key])
            out[key] = value
    return out


def _get(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        node = node[part]
    return node


def _set(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value


def _has(raw, dotted):
    node = raw
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return True


def validate(raw: dict, require=REQUIRED) -> dict:
    """Merge a user mapping over the defaults, rejecting unknown keys and
    wrong types.  Returns the fully populated (still unresolved) config."""
    if raw is None:
        raw = {}
    version = raw.get("schema_version", SCHEMA_VERSION) if isinstance(raw, dict) else None
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}")
    missing = [key for key in require if not _has(raw, key)]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    cfg = _merge("", raw, DEFAULTS)
    for key in ("trap.omega_x", "trap.omega_y", "trap.omega_z", "trap.mass_amu"):
        if not _get(cfg, key) > 0:
            raise ConfigError(f"{key} must be positive")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    if cfg["ed"]["mode"] not in ("scan", "tied"):
        raise ConfigError("ed.mode must be scan or tied")
    if cfg["ed"]["boundary"] not in ("periodic", "open"):
        raise ConfigError("ed.boundary must be periodic or open")
    if cfg["dynamics"]["couplings"] not in COUPLING_SOURCES:
        raise ConfigError("dynamics.couplings must be one of " + ", ".join(COUPLING_SOURCES))
    return cfg


def load(path) -> dict:
    """Validated config from a YAML file or from a run manifest."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if isinstance(raw, dict) and "manifest_version" in raw:
        raw = raw.get("config")
    return validate(raw)


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def parse_override(text):
    """``key.path=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, value = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {value!r}") from exc


def apply_overrides(cfg: dict, overrides) -> dict:
    raw = copy.deepcopy(cfg)
    for text in overrides or ():
        key, value = parse_override(text)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown key {key}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown key {key}")
        node[parts[-1]] = value
    return validate(raw)


def resolve(cfg: dict) -> dict:
    """Copy with every frequency in rad/s and the unit flag set to true."""
    out = copy.deepcopy(cfg)
    if not cfg["frequencies_are_angular"]:
        for key in FREQUENCY_KEYS:
            value = _get(out, key)
            if value is not None:
                _set(out, key, 2 * math.pi * value)
        out["frequencies_are_angular"] = True
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def output_root(cfg: dict, cli_value=None) -> str:
    """CLI flag, then the environment variable, then the config entry."""
    return cli_value or os.environ.get(OUTPUT_ENV) or cfg["output_dir"]


def parse_grid(spec) -> list:
    """Grid syntax: a number, ``a,b,c`` or ``start:stop:step`` (stop included).
    Pieces can be joined with commas, e.g. ``0:0.5:0.1,0.8``."""
    if _is_number(spec):
        return [float(spec)]
    if isinstance(spec, list):
        out = []
        for item in spec:
            out.extend(parse_grid(item))
        return out
    if not isinstance(spec, str) or not spec.strip():
        raise ConfigError(f"bad grid {spec!r}")
    out = []
    for piece in spec.split(","):
        piece = piece.strip()
        try:
            if ":" in piece:
                start, stop, step = (float(x) for x in piece.split(":"))
                if step <= 0 or stop < start:
                    raise ConfigError(f"bad grid range {piece!r}")
                count = int(math.floor((stop - start) / step + 1e-9)) + 1
                out.extend(round(start + k * step, 12) for k in range(count))
            else:
                out.append(float(piece))
        except ValueError as exc:
            raise ConfigError(f"bad grid piece {piece!r}") from exc
    return out
