"""Run configuration: JSON schema, defaults and built-in fixtures.

A config file is either a bare model ``{"factor1": ..., "factor2": ..., "alpha": ...}``
or a run config ``{"model": {...}, "seed": ..., "<command>": {...}}``.  Unknown keys
are rejected.
"""

from __future__ import annotations

import copy
import json

import jsonschema

from .errors import ModelError

_WORD = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [{"type": "integer", "enum": [1, 2]}, {"type": ["string", "integer"]}],
                "minItems": 2,
                "maxItems": 2,
            },
        },
    ]
}

_FACTOR = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "explicit"},
                "root": {"type": "string"},
                "edges": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [{"type": "string"}, {"type": "string"}, {"type": "number"}],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
            "required": ["kind", "root", "edges"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"const": "builtin"}, "name": {"enum": ["ray", "two_leaf_star"]}},
            "required": ["kind", "name"],
            "additionalProperties": False,
        },
    ],
}

MODEL_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "factor1": _FACTOR,
        "factor2": _FACTOR,
        "alpha": {"type": "number"},
    },
    "required": ["factor1", "factor2", "alpha"],
    "additionalProperties": False,
}


def _block(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


_POS = {"type": "integer", "minimum": 1}
_NONNEG = {"type": "integer", "minimum": 0}

#: defaults of every command block
DEFAULTS = {
    "genfun": {"z": 1.0, "rho0": None},
    "capacity": {"set": [], "constraint": None},
    "simulate": {"steps": 10000, "replicas": 1, "guard": 1000, "dump_steps": 0, "letter": None},
    "estimate": {
        "n_schedule": [1000, 5000, 10000],
        "direct_replicas": 20,
        "horizon": 100000,
        "regen_replicas": 4,
        "guard": 1000,
        "letter": None,
    },
    "clt": {"m_walks": 2000, "n_steps": 5000, "calib_replicas": 1000, "calib_horizon": 200000,
            "calib_regen_replicas": 4},
    "sweep": {"parameter": "alpha", "grid": [round(0.2 + 0.05 * k, 10) for k in range(13)], "horizon": 100000,
              "replicas": 4, "degree": 4},
    "audit": {"replicas": 5, "steps": 2000, "kmax": 30, "guard": 200},
}

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "model": MODEL_SCHEMA,
        "seed": {"type": "integer", "minimum": 0},
        "workers": _POS,
        "out_dir": {"type": "string"},
        "genfun": _block({"z": {"type": "number", "exclusiveMinimum": 0},
                          "rho0": {"type": ["number", "null"]}}),
        "capacity": _block(
            {
                "set": {"type": "array", "items": _WORD},
                "constraint": {
                    "oneOf": [
                        {"type": "null"},
                        _block({
                            "variant": {"enum": ["none", "stay_in", "avoid_cone_after_start", "avoid_initial_factor"]},
                            "anchor": _WORD,
                            "factor": {"enum": [1, 2]},
                            "start": _WORD,
                        }),
                    ]
                },
            }
        ),
        "simulate": _block({"steps": _NONNEG, "replicas": _POS, "guard": _NONNEG, "dump_steps": _NONNEG,
                            "letter": {"type": ["string", "null"]}}),
        "estimate": _block(
            {
                "n_schedule": {"type": "array", "items": _POS, "minItems": 1},
                "direct_replicas": _POS,
                "horizon": _POS,
                "regen_replicas": _POS,
                "guard": _NONNEG,
                "letter": {"type": ["string", "null"]},
            }
        ),
        "clt": _block({"m_walks": _POS, "n_steps": _POS, "calib_replicas": _POS, "calib_horizon": _POS,
                       "calib_regen_replicas": _POS}),
        "sweep": _block(
            {
                "parameter": {"type": "string"},
                "grid": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "horizon": _POS,
                "replicas": _POS,
                "degree": _POS,
            }
        ),
        "audit": _block({"replicas": _POS, "steps": _POS, "kmax": _POS, "guard": _NONNEG}),
    },
    "required": ["model"],
    "additionalProperties": False,
}


FIXTURES = {
    "exampleA": {
        "factor1": {"kind": "explicit", "root": "o1", "edges": [["o1", "a", 1.0], ["a", "o1", 1.0]]},
        "factor2": {
            "kind": "explicit",
            "root": "o2",
            "edges": [["o2", "b", 1.0], ["b", "c", 1.0], ["c", "o2", 0.5], ["c", "b", 0.5]],
        },
        "alpha": 0.5,
    },
    "null": {
        "factor1": {"kind": "builtin", "name": "two_leaf_star"},
        "factor2": {"kind": "builtin", "name": "two_leaf_star"},
        "alpha": 0.5,
    },
    "ray": {
        "factor1": {"kind": "builtin", "name": "ray"},
        "factor2": {"kind": "builtin", "name": "ray"},
        "alpha": 0.5,
    },
}


def fixture(name: str) -> dict:
    try:
        return copy.deepcopy(FIXTURES[name])
    except KeyError:
        raise ModelError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None


def _validate(doc, schema, what):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelError(f"cli: invalid {what} at {path}: {exc.message}") from None


def load_run_config(doc) -> dict:
    """Normalize a parsed JSON document into a run config (bare models are wrapped)."""
    if not isinstance(doc, dict):
        raise ModelError("cli: config must be a JSON object")
    if "model" not in doc and {"factor1", "factor2", "alpha"} & set(doc):
        _validate(doc, MODEL_SCHEMA, "model")
        doc = {"model": doc}
    if "set" in doc or "constraint" in doc:
        # capacity queries may put the set next to the model
        doc = dict(doc)
        block = dict(doc.get("capacity", {}))
        for key in ("set", "constraint"):
            if key in doc:
                block[key] = doc.pop(key)
        doc["capacity"] = block
    _validate(doc, RUN_SCHEMA, "run config")
    return copy.deepcopy(doc)


def read_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ModelError(f"cli: config file {path!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ModelError(f"cli: config file {path!r} is not valid JSON: {exc}") from None
    return load_run_config(doc)


def resolve(cfg: dict, command: str) -> dict:
    """Fill the command block with defaults; the result re-parses to itself."""
    out = copy.deepcopy(cfg)
    out.pop("workers", None)
    out.pop("out_dir", None)
    if command in DEFAULTS:
        block = copy.deepcopy(DEFAULTS[command])
        block.update(out.get(command, {}))
        out[command] = block
    return out
