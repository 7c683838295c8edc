"""Experiment configuration: JSON schema, validation and object builders."""
import copy
import json
import os
from importlib import resources

import jsonschema
import numpy as np

from .control import Control, MarkSpace
from .errors import ConfigurationError
from .operators import AffineNoise, BurgersDrift, PLaplaceDrift, ScalarLinearDrift, SineNoise
from .rate import EventSpec, RateOptions
from .skeleton import SkeletonProblem

__all__ = [
    "CONFIG_SCHEMA",
    "REPORT_SCHEMA",
    "load_config",
    "validate_config",
    "bundled_config",
    "bundled_names",
    "build_problem",
    "build_control",
    "build_event",
    "ENV_PREFIX",
]

ENV_PREFIX = "LDPLAB_"

_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ldplab experiment config",
    "type": "object",
    "required": ["problem"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "problem": {
            "type": "object",
            "required": ["operator", "noise", "marks", "T", "x0"],
            "additionalProperties": False,
            "properties": {
                "operator": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["scalar_linear", "p_laplace", "burgers"]},
                        "a": {"type": "number"},
                        "dim": {"type": "integer", "minimum": 1},
                        "n": {"type": "integer", "minimum": 3},
                        "p": {"type": "number", "exclusiveMinimum": 1},
                        "kappa": {"type": "number", "minimum": 0},
                        "nu": _pos,
                        "length": _pos,
                        "F": {"type": "number", "minimum": 0},
                        "theta": _pos,
                        "C": _pos,
                    },
                },
                "noise": {
                    "type": "object",
                    "required": ["kind", "sigma"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["affine", "sine"]},
                        "sigma": _num_list,
                        "kappa": {"type": "number"},
                        "base": {"type": "number"},
                        "omega": {"type": "number"},
                        "declared_lipschitz": {"type": "number", "minimum": 0},
                    },
                },
                "marks": {
                    "type": "object",
                    "required": ["nu_weights"],
                    "additionalProperties": False,
                    "properties": {
                        "marks": _num_list,
                        "nu_weights": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                    },
                },
                "T": _pos,
                "x0": {
                    "oneOf": [
                        {"type": "number"},
                        _num_list,
                        {
                            "type": "object",
                            "required": ["kind"],
                            "additionalProperties": False,
                            "properties": {
                                "kind": {"const": "sine"},
                                "amplitude": {"type": "number"},
                                "mode": {"type": "integer", "minimum": 0},
                            },
                        },
                    ]
                },
            },
        },
        "control": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "time_grid": _num_list,
                "values": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
                "constant": {"type": "number", "minimum": 0},
                "cells": {"type": "integer", "minimum": 1},
            },
        },
        "event": {
            "type": "object",
            "required": ["kind", "payload"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["terminal_threshold", "terminal_point", "trajectory_functional"]},
                "payload": {},
                "penalty_weight": _pos,
                "direction": {"enum": ["above", "below"]},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"oneOf": [{"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, _num_list]},
                "dt": _pos,
                "fp_tol": _pos,
                "paths": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "cap": _pos,
                "audit_samples": {"type": "integer", "minimum": 1},
                "N": _pos,
                "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "m_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
                "delta": _pos,
                "rate_cells": {"type": "integer", "minimum": 1},
                "rate_cap": _pos,
                "tail_paths": {"type": "integer", "minimum": 1},
                "tail_eps": _num_list,
                "oracle": {"enum": ["none", "scalar_linear"]},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
            },
        },
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["name", "inputs_digest", "status", "runtime", "verdicts", "metrics"],
    "properties": {
        "name": {"type": "string"},
        "inputs_digest": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "status": {"enum": ["pass", "fail", "inconclusive"]},
        "runtime": {"type": "number", "minimum": 0},
        "verdicts": {
            "type": "object",
            "additionalProperties": {"type": "object", "required": ["passed"]},
        },
        "metrics": {"type": "array", "items": {"type": "object"}},
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def validate_config(cfg):
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigurationError(f"config invalid: {err.message}", _pointer(err.absolute_path))
    return cfg


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("ldplab.configs").iterdir() if p.name.endswith(".json"))


def bundled_config(name):
    path = resources.files("ldplab.configs") / f"{name}.json"
    if not path.is_file():
        raise ConfigurationError(f"no bundled config named {name!r}; have {bundled_names()}")
    return json.loads(path.read_text())


def load_config(path_or_name):
    """Read and validate a config file; a bare name selects a bundled config."""
    if os.path.exists(path_or_name):
        with open(path_or_name) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    else:
        cfg = bundled_config(path_or_name)
    return validate_config(cfg)


def _x0(spec, dim):
    if isinstance(spec, dict):
        x = np.arange(dim) / dim
        return spec.get("amplitude", 1.0) * np.sin(2 * np.pi * spec.get("mode", 1) * x)
    if isinstance(spec, (int, float)):
        return np.full(dim, float(spec))
    arr = np.asarray(spec, dtype=float)
    if arr.shape != (dim,):
        raise ConfigurationError(f"x0 has length {arr.size}, expected {dim}", "/problem/x0")
    return arr


def build_problem(cfg):
    p = cfg["problem"]
    op = p["operator"]
    kind = op["kind"]
    common = {}
    if "F" in op:
        common["F"] = op["F"]
    if "theta" in op:
        common["theta"] = op["theta"]
    if "C" in op:
        common["c_growth"] = op["C"]
    if kind == "scalar_linear":
        drift = ScalarLinearDrift(op.get("a", 1.0), op.get("dim", 1), **common)
    elif kind == "p_laplace":
        drift = PLaplaceDrift(op.get("n", 32), op.get("p", 2.0), length=op.get("length", 1.0), kappa=op.get("kappa", 1.0), **common)
    else:
        drift = BurgersDrift(op.get("n", 32), op.get("nu", 0.1), length=op.get("length", 1.0), **common)
    space = drift.space
    nz = p["noise"]
    if nz["kind"] == "affine":
        noise = AffineNoise(space, nz["sigma"], nz.get("kappa", 0.0), nz.get("base", 1.0))
    else:
        noise = SineNoise(space, nz["sigma"], nz.get("omega", 1.0), nz.get("declared_lipschitz"))
    mk = p["marks"]
    weights = mk["nu_weights"]
    marks = mk.get("marks", list(range(len(weights))))
    if len(marks) != len(weights):
        raise ConfigurationError("marks and nu_weights differ in length", "/problem/marks")
    if len(nz["sigma"]) != len(weights):
        raise ConfigurationError("noise sigma needs one entry per mark", "/problem/noise/sigma")
    ms = MarkSpace(marks, weights)
    return SkeletonProblem(space, drift, noise, ms, _x0(p["x0"], space.dim), float(p["T"]))


def build_control(cfg, problem, required=True):
    c = cfg.get("control")
    if c is None:
        if required:
            raise ConfigurationError("this command needs a control block", "/control")
        return None
    if "constant" in c:
        return Control.constant(c["constant"], problem.T, problem.ms.m, c.get("cells", 1))
    if "time_grid" not in c or "values" not in c:
        raise ConfigurationError("control needs either constant or time_grid + values", "/control")
    g = Control(c["time_grid"], c["values"])
    if g.values.shape[1] != problem.ms.m:
        raise ConfigurationError("control values need one column per mark", "/control/values")
    if abs(g.T - problem.T) > 1e-12 * problem.T:
        raise ConfigurationError("control time_grid must end at T", "/control/time_grid")
    return g


def build_event(cfg, required=True):
    e = cfg.get("event")
    if e is None:
        if required:
            raise ConfigurationError("this command needs an event block", "/event")
        return None
    payload = e["payload"]
    if e["kind"] == "terminal_threshold":
        payload = tuple(payload)
    return EventSpec(e["kind"], payload, e.get("penalty_weight", 10.0), e.get("direction", "above"))


def rate_options(cfg):
    run = cfg.get("run", {})
    return RateOptions(cells=run.get("rate_cells", 8), dt=run.get("dt"), fp_tol=run.get("fp_tol"))


def resolved(cfg, **overrides):
    out = copy.deepcopy(cfg)
    run = out.setdefault("run", {})
    for k, v in overrides.items():
        if v is not None:
            run[k] = v
    return out
