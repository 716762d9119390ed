"""Experiment configuration: strict JSON schema, no implicit entropy.

Unknown keys are rejected everywhere, seeds are mandatory, and validation
reports every violation at once.  ``validate_config`` also runs the billiard
table validation so the normalized config carries the horizon bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import geometry, markov, observables

EXPERIMENTS = [
    "validate",
    "sigma",
    "llt",
    "mixing",
    "tail",
    "oracle-identities",
    "prop-scan",
]

_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["table", "experiment", "params"],
    "properties": {
        "table": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "scatterers"],
                    "properties": {
                        "kind": {"const": "billiard"},
                        "scatterers": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["center", "radius"],
                                "properties": {
                                    "center": {
                                        "type": "array",
                                        "items": {"type": "number"},
                                        "minItems": 2,
                                        "maxItems": 2,
                                    },
                                    "radius": {
                                        "type": "number",
                                        "exclusiveMinimum": 0,
                                        "exclusiveMaximum": 0.5,
                                    },
                                },
                            },
                        },
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["srw", "lazy-srw"]},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "kernels"],
                    "properties": {
                        "kind": {"const": "markov"},
                        "require_aperiodic": {"type": "boolean"},
                        "kernels": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["jump", "matrix"],
                                "properties": {
                                    "jump": {
                                        "type": "array",
                                        "items": {"type": "integer"},
                                        "minItems": 2,
                                        "maxItems": 2,
                                    },
                                    "matrix": {
                                        "type": "array",
                                        "items": {
                                            "type": "array",
                                            "items": {"type": "number", "minimum": 0},
                                        },
                                    },
                                },
                            },
                        },
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"const": "random-extension"},
                        "states": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer"},
                    },
                },
            ]
        },
        "observables": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["profile", "local"],
                "properties": {
                    "profile": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["finite", "geometric", "power"]},
                            "weights": {
                                "type": "array",
                                "items": {
                                    "type": "object",
                                    "additionalProperties": False,
                                    "required": ["cell", "w"],
                                    "properties": {
                                        "cell": {
                                            "type": "array",
                                            "items": {"type": "integer"},
                                            "minItems": 2,
                                            "maxItems": 2,
                                        },
                                        "w": {"type": "number"},
                                    },
                                },
                            },
                            "rho": {
                                "type": "number",
                                "exclusiveMinimum": 0,
                                "exclusiveMaximum": 1,
                            },
                            "gamma": {"type": "number"},
                            "amplitude": {"type": "number"},
                        },
                    },
                    "local": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["preset"],
                        "properties": {
                            "preset": {
                                "enum": [
                                    "constant",
                                    "state_indicator",
                                    "jump_indicator",
                                    "match_next_scatterer",
                                ]
                            },
                            "value": {"type": "number"},
                            "state": {"type": "integer"},
                            "jump": {
                                "type": "array",
                                "items": {"type": "integer"},
                                "minItems": 2,
                                "maxItems": 2,
                            },
                        },
                    },
                },
            },
        },
        "experiment": {"enum": EXPERIMENTS},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "required": ["seed"],
            "properties": {
                "seed": {"type": "integer"},
                "N": {"type": "integer", "minimum": 1},
                "n_grid": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "cells": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "integer"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "cap": {"type": "integer", "minimum": 1},
                "n_sigma": {"type": "integer", "minimum": 1},
                "N_sigma": {"type": "integer", "minimum": 100},
                "n_max": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 0},
                "workers": {"type": "integer", "minimum": 0},
                "pairs": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "string"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
                "exact": {"type": "boolean"},
                "n_dirs": {"type": "integer", "minimum": 1},
                "n_rays": {"type": "integer", "minimum": 1},
                "ratio_tol": {"type": "number"},
            },
        },
        "output": {"type": "string"},
    },
}


class SchemaError(ValueError):
    """Config violates the schema; message lists every violation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("config invalid:\n" + "\n".join(f"  - {v}" for v in self.violations))


@dataclass
class ExperimentConfig:
    """Normalized, validated experiment description."""

    raw: dict
    experiment: str
    params: dict
    system: object
    table: geometry.BilliardTable | None
    observables: dict
    output: str | None

    @property
    def seed(self) -> int:
        return int(self.params["seed"])

    @property
    def workers(self) -> int:
        return int(self.params.get("workers", 0))

    @property
    def is_billiard(self) -> bool:
        return self.table is not None


def _build_system(spec: dict, workers: int):
    from .billiard import BilliardSystem

    kind = spec["kind"]
    if kind == "billiard":
        table = geometry.BilliardTable(
            [
                geometry.ScattererSpec(center=tuple(s["center"]), radius=s["radius"])
                for s in spec["scatterers"]
            ]
        )
        return table, None
    if kind == "srw":
        return None, markov.srw()
    if kind == "lazy-srw":
        return None, markov.lazy_srw()
    if kind == "random-extension":
        return None, markov.random_extension(
            n_states=spec.get("states", 3), seed=spec.get("seed", 7)
        )
    if kind == "markov":
        kernels = {
            tuple(k["jump"]): np.asarray(k["matrix"], dtype=np.float64)
            for k in spec["kernels"]
        }
        return None, markov.MarkovExtension(
            kernels, require_aperiodic=spec.get("require_aperiodic", True)
        )
    raise SchemaError([f"unknown table kind {kind!r}"])


def _build_observable(name: str, spec: dict, system) -> observables.Observable:
    pspec = spec["profile"]
    kind = pspec["kind"]
    if kind == "finite":
        profile = observables.CellWeightProfile.finite(
            {tuple(w["cell"]): w["w"] for w in pspec.get("weights", [])}
        )
    elif kind == "geometric":
        profile = observables.CellWeightProfile.geometric(
            rho=pspec.get("rho", 0.5), amplitude=pspec.get("amplitude", 1.0)
        )
    else:
        profile = observables.CellWeightProfile.power(
            gamma=pspec.get("gamma", 2.0), amplitude=pspec.get("amplitude", 1.0)
        )
    lspec = dict(spec["local"])
    preset = lspec.pop("preset")
    local = observables.local_preset(preset, **lspec)
    from .stats import RngSpec

    return observables.make_observable(
        profile, local, system=system, rng=RngSpec(0xB5EED, 1), name=name
    )


def validate_config(path: str | Path) -> ExperimentConfig:
    """Load, schema-check, and normalize a config; runs table validation."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError([f"not valid JSON: {e}"]) from e

    validator = jsonschema.Draft202012Validator(_SCHEMA)
    violations = [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in validator.iter_errors(raw)
    ]
    if violations:
        raise SchemaError(violations)

    params = dict(raw["params"])
    workers = int(params.get("workers", 0))
    table, system = _build_system(raw["table"], workers)
    if table is not None:
        geometry.validate_table(
            table,
            n_dirs=params.get("n_dirs", 8),
            n_rays=params.get("n_rays", 100_000),
            rng=int(params["seed"]),
        )
        from .billiard import BilliardSystem

        system = BilliardSystem(table, num_threads=workers)

    obs = {}
    for name, ospec in raw.get("observables", {}).items():
        obs[name] = _build_observable(name, ospec, system)

    exp = raw["experiment"]
    if exp in ("oracle-identities",) and table is not None:
        raise SchemaError(["oracle-identities requires a Markov table"])
    return ExperimentConfig(
        raw=raw,
        experiment=exp,
        params=params,
        system=system,
        table=table,
        observables=obs,
        output=raw.get("output"),
    )
