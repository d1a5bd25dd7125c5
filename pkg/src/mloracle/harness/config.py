"""Scenario configuration: loading, schema validation and hashing.

Configs are YAML or JSON documents checked against a JSON Schema in which
every object rejects unknown keys.  Exactly one controller block must be
present and a seed is mandatory.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import yaml

from ..errors import ConfigInvalid, IoFailure

_VECTOR = {"type": "array", "items": {"type": "number"}}
_MATRIX = {"type": "array", "items": _VECTOR, "minItems": 1}
_WEIGHT = {"oneOf": [{"type": "number", "minimum": 0}, _VECTOR, _MATRIX]}
_BOX = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lower", "upper"],
    "properties": {"lower": _VECTOR, "upper": _VECTOR},
}
_COUNT = {"type": "integer", "minimum": 1}

_PLANT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["benchmark"],
    "properties": {
        "benchmark": {"enum": ["cstr", "fedbatch_bioreactor", "linear"]},
        "a": _MATRIX,
        "b": _MATRIX,
        "c": _MATRIX,
        "sampling_time": {"type": "number", "exclusiveMinimum": 0},
        "initial_state": _VECTOR,
        "state_bounds": _BOX,
        "input_bounds": _BOX,
    },
}

_GP = {
    "type": "object",
    "additionalProperties": False,
    "required": ["inputs", "labels"],
    "properties": {
        "inputs": _MATRIX,
        "labels": _VECTOR,
        "h1": {"type": "number", "exclusiveMinimum": 0},
        "h2": {"type": "number", "exclusiveMinimum": 0},
        "nu": {"type": "number", "exclusiveMinimum": 0},
    },
}

_SETPOINT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["x", "u"],
    "properties": {"x": _VECTOR, "z": _VECTOR, "u": _VECTOR},
}

_MPC_PROPS = {
    "horizon": _COUNT,
    "q": _WEIGHT,
    "r": _WEIGHT,
    "s": _WEIGHT,
    "setpoint": _SETPOINT,
    "state_bounds": _BOX,
    "terminal_state_bounds": _BOX,
    "max_iterations": _COUNT,
}
_MPC = {
    "type": "object",
    "additionalProperties": False,
    "required": ["horizon", "q", "s", "setpoint"],
    "properties": _MPC_PROPS,
}
_TRACKING = {
    "type": "object",
    "additionalProperties": False,
    "required": ["horizon", "q", "s"],
    "properties": {k: v for k, v in _MPC_PROPS.items() if k != "setpoint"},
}

_ECONOMIC = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **{f"{v}_linear": _VECTOR for v in "xzu"},
        **{f"{v}_quadratic": _VECTOR for v in "xzu"},
        **{f"{v}_target": _VECTOR for v in "xzu"},
    },
}

_CONTROLLERS = {
    "open_loop": {
        "type": "object",
        "additionalProperties": False,
        "required": ["inputs"],
        "properties": {"inputs": _MATRIX},
    },
    "mpc": _MPC,
    "rto": {
        "type": "object",
        "additionalProperties": False,
        "required": ["economic", "guess", "tracking"],
        "properties": {
            "economic": _ECONOMIC,
            "guess": {
                "type": "object",
                "additionalProperties": False,
                "required": ["x", "u"],
                "properties": {"x": _VECTOR, "z": _VECTOR, "u": _VECTOR},
            },
            "tracking": _TRACKING,
        },
    },
    "backoff_mpc": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mpc"],
        "properties": {
            "mpc": _MPC,
            "lambda": {"type": "number", "minimum": 0},
            "target_violation": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "gp": _GP,
        },
    },
    "ilc": {
        "type": "object",
        "additionalProperties": False,
        "required": ["reference", "iterations"],
        "properties": {
            "reference": _VECTOR,
            "iterations": _COUNT,
            "gain": {"enum": ["inverse", "gradient"]},
            "gamma": {"type": "number", "exclusiveMinimum": 0},
            "q_filter": {"enum": ["identity"]},
        },
    },
    "imitation": {
        "type": "object",
        "additionalProperties": False,
        "required": ["mpc", "domain", "samples"],
        "properties": {
            "mpc": _MPC,
            "domain": _BOX,
            "samples": _COUNT,
            "hidden_units": {"type": "integer", "minimum": 0},
            "max_iterations": _COUNT,
            "validation_samples": _COUNT,
            "epsilon": {"type": "number", "minimum": 0},
        },
    },
    "imc": {
        "type": "object",
        "additionalProperties": False,
        "required": ["setpoint", "samples"],
        "properties": {
            "setpoint": _VECTOR,
            "samples": _COUNT,
            "hidden_units": {"type": "integer", "minimum": 0},
            "max_iterations": _COUNT,
            "real_plant": _PLANT,
        },
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["plant", "controller", "steps", "seed"],
    "properties": {
        "name": {"type": "string"},
        "plant": _PLANT,
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": _CONTROLLERS,
        },
        "steps": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "measurement_std": _VECTOR,
                "process_std": _VECTOR,
                "gp_disturbance": _GP,
            },
        },
        "estimator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["window", "targets", "training_runs"],
            "properties": {
                "window": _COUNT,
                "targets": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "outputs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "training_runs": _COUNT,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "format": {"enum": ["csv", "json"]},
                "figures": {"type": "boolean"},
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _path(error) -> str:
    parts = ["$"] + [f"[{p}]" if isinstance(p, int) else f".{p}" for p in error.absolute_path]
    return "".join(parts)


def validate_config(config: dict) -> dict:
    """Check ``config`` against the schema; raise :class:`ConfigInvalid` with a field path."""
    errors = sorted(_VALIDATOR.iter_errors(config), key=lambda e: (len(list(e.absolute_path)), str(e.message)))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigInvalid(err.message, _path(err))
    plant = config["plant"]
    if plant["benchmark"] == "linear" and ("a" not in plant or "b" not in plant):
        raise ConfigInvalid("a linear plant needs matrices a and b", "$.plant")
    ctl = config["controller"]
    if "backoff_mpc" in ctl:
        b = ctl["backoff_mpc"]
        if "lambda" in b and "target_violation" in b:
            raise ConfigInvalid("give either lambda or target_violation, not both", "$.controller.backoff_mpc")
        if "gp" not in b and "gp_disturbance" not in config.get("noise", {}):
            raise ConfigInvalid("backoff_mpc needs a gp block or noise.gp_disturbance", "$.controller.backoff_mpc")
    return config


def load_config(path) -> dict:
    """Read a YAML/JSON file and validate it."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("top level must be a mapping", "$")
    return validate_config(data)


def with_seed(config: dict, seed: int) -> dict:
    out = copy.deepcopy(config)
    out["seed"] = int(seed)
    return out


def canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of the config."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()
