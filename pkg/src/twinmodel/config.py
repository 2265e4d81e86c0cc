"""Experiment configuration: JSON schema, defaults and loading."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


IC_SCHEMA = _obj({
    "name": {"type": "string", "pattern": "^[A-Za-z0-9_-]+$"},
    "kind": {"enum": ["square", "gaussian", "sine", "ramp"]},
    "low": _num, "high": _num, "center": _num, "width": _pos,
}, required=["name", "kind"])

FLUX_TRUTH_SCHEMA = {
    "oneOf": [
        _obj({"kind": {"const": "buckley_leverett"}, "A": {"type": "number", "minimum": 0}},
             required=["kind"]),
        _obj({"kind": {"const": "twin"}, "xi": {"type": "array", "items": {"type": "number", "minimum": 0}}},
             required=["kind", "xi"]),
    ]
}

CONFIG_SCHEMA = _obj({
    "case": {"enum": ["porous1d", "nozzle-eos"]},
    "seed": {"type": "integer", "minimum": 0},
    "porous1d": _obj({
        "grid": _obj({"nx": {"type": "integer", "minimum": 3}, "nt": {"type": "integer", "minimum": 2},
                      "length": _pos, "horizon": _pos}),
        "truth": FLUX_TRUTH_SCHEMA,
        "initial_conditions": {"type": "array", "minItems": 1, "items": IC_SCHEMA},
        "control": _obj({"kind": {"enum": ["zero", "constant", "random"]},
                         "value": _num, "amplitude": {"type": "number", "minimum": 0}}),
        "basis": _obj({"m": _posint, "lo": _num, "hi": _num}),
        "objective": _obj({"target": _num, "control_weight": {"type": "number", "minimum": 0}}),
        "solver": _obj({"newton_tol": _pos, "newton_max_iter": _posint,
                        "limiter": {"enum": ["minmod", "none"]}}),
    }),
    "nozzle": _obj({
        "n_cells": {"type": "integer", "minimum": 2},
        "steady_tol": _pos,
        "length": _pos,
        "ordinates": {"type": "array", "minItems": 3, "items": _pos},
        "bc": _obj({"p_t_in": _pos, "p_out": _pos, "rho_in": _pos}),
        "eos": _obj({"kind": {"enum": ["ideal", "vdw", "rk"]},
                     "gamma": {"type": "number", "exclusiveMinimum": 1},
                     "a": {"type": "number", "minimum": 0}, "b": {"type": "number", "minimum": 0}}),
        "basis": _obj({"N_rho": _posint, "N_U": _posint}),
        "calibration": _obj({"n_random": {"type": "integer", "minimum": 2}}),
    }),
    "training": _obj({
        "lambda": {"type": ["number", "null"], "minimum": 0},
        "lambda_rel": {"type": "number", "minimum": 0},
        "memory": _posint, "max_iter": {"type": "integer", "minimum": 0}, "gtol": _pos,
        "resume": {"type": "boolean"},
        "perturb_truth": {"type": ["number", "null"], "minimum": 0},
    }),
    "gradient": _obj({"threshold": _pos}),
    "sweep": _obj({"lambda_rel": {"type": "array", "minItems": 1, "items": _pos},
                   "initial_condition": {"type": "string"}}),
}, required=["case"])

DEFAULTS = {
    "seed": 0,
    "porous1d": {
        "grid": {"nx": 100, "nt": 200, "length": 1.0, "horizon": 1.0},
        "truth": {"kind": "buckley_leverett", "A": 2.0},
        "initial_conditions": [{"name": "square", "kind": "square", "low": 0.0, "high": 1.0}],
        "control": {"kind": "zero", "value": 0.0, "amplitude": 0.0},
        "basis": {"m": 20, "lo": -0.1, "hi": 1.1},
        "objective": {"target": 0.5, "control_weight": 0.0},
        "solver": {"newton_tol": 1e-10, "newton_max_iter": 50, "limiter": "minmod"},
    },
    "nozzle": {
        "n_cells": 64,
        "steady_tol": 1e-10,
        "length": 1.0,
        "ordinates": [1.0, 0.9, 0.75, 0.8, 0.95, 1.0],
        "bc": {"p_t_in": 1e5, "p_out": 9e4, "rho_in": 1.0},
        "eos": {"kind": "ideal", "gamma": 1.4},
        "basis": {"N_rho": 8, "N_U": 8},
        "calibration": {"n_random": 5},
    },
    "training": {"lambda": None, "lambda_rel": 1e-6, "memory": 10, "max_iter": 150,
                 "gtol": 1e-8, "resume": False, "perturb_truth": None},
    "gradient": {"threshold": 0.15},
    "sweep": {"lambda_rel": [1e-2, 1e-1, 1.0]},
}

IC_DEFAULTS = {"low": 0.0, "high": 1.0, "center": 0.5, "width": 0.3}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "truth":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw: dict) -> dict:
    """Schema-check ``raw`` and return it merged over the defaults."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    por = cfg["porous1d"]
    por["initial_conditions"] = [{**IC_DEFAULTS, **ic} for ic in por["initial_conditions"]]
    names = [ic["name"] for ic in por["initial_conditions"]]
    if len(set(names)) != len(names):
        raise ConfigError("initial condition names must be unique")
    if por["basis"]["hi"] <= por["basis"]["lo"]:
        raise ConfigError("flux basis needs hi > lo")
    if por["truth"]["kind"] == "twin" and len(por["truth"]["xi"]) != por["basis"]["m"]:
        raise ConfigError("twin truth needs one coefficient per basis function")
    noz = cfg["nozzle"]
    if not noz["bc"]["p_t_in"] > noz["bc"]["p_out"]:
        raise ConfigError("nozzle needs p_t_in > p_out")
    return cfg


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(raw)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
