"""Scenario and result file handling.

Scenario files are versioned JSON artifacts carrying plants as explicit
matrices, nonlinearities by family reference, controller structures, program
and simulation settings.  Files are schema-validated before any computation
and unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from jsonschema import Draft202012Validator

from .ltisys import PartitionedPlant, StateSpace
from .nonlin import Nonlinearity, attractor_nonlinearities, qp_nonlinearity
from .synth import ControllerStructure

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioError",
    "Scenario",
    "load_scenario",
    "scenario_from_dict",
    "plant_to_dict",
    "plant_from_dict",
    "write_result",
    "jsonable",
]

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


_SS_SCHEMA = {
    "type": "object",
    "properties": {
        "A": {"type": "array"},
        "B": {"type": "array"},
        "C": {"type": "array"},
        "D": {"type": "array"},
    },
    "required": ["A", "B", "C", "D"],
    "additionalProperties": False,
}

_PLANT_SCHEMA = {
    "type": "object",
    "properties": {
        **_SS_SCHEMA["properties"],
        "input_groups": {"type": "array"},
        "output_groups": {"type": "array"},
    },
    "required": ["A", "B", "C", "D", "input_groups", "output_groups"],
    "additionalProperties": False,
}

_CHANNEL_SCHEMA = {
    "type": "object",
    "properties": {
        "from": {"type": "string"},
        "to": {"type": "string"},
        "kind": {"enum": ["hinf", "pk_gn"]},
        "bound": {"type": ["number", "null"]},
    },
    "required": ["from", "to", "kind"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "systems": {
            "type": "object",
            "additionalProperties": _SS_SCHEMA,
        },
        "plant": _PLANT_SCHEMA,
        "nonlinearity": {
            "type": "object",
            "properties": {
                "family": {"type": "string"},
                "params": {"type": "object"},
            },
            "required": ["family"],
            "additionalProperties": False,
        },
        "controller": _SS_SCHEMA,
        "structure": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["static", "pid", "fixed_order"]},
                "n_y": {"type": "integer"},
                "n_u": {"type": "integer"},
                "n_K": {"type": "integer"},
                "lag_form": {"type": "boolean"},
                "strictly_proper": {"type": "boolean"},
                "init_ranges": {"type": "array"},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "program": {
            "type": "object",
            "properties": {
                "center": {"type": ["number", "array"]},
                "objective": _CHANNEL_SCHEMA,
                "constraint": _CHANNEL_SCHEMA,
                "tau": {"type": "number"},
                "threshold": {"type": "number"},
                "h2h": {
                    "type": "object",
                    "properties": {
                        "center": {"type": ["number", "array"]},
                        "threshold": {"type": "number"},
                    },
                    "required": ["center", "threshold"],
                    "additionalProperties": False,
                },
            },
            "required": ["objective"],
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "x0": {"type": "array"},
                "t_end": {"type": "number"},
                "tol": {"type": "number"},
                "n_points": {"type": "integer"},
                "probe_amplitude": {"type": "number"},
                "probe_t_end": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "c_grid": {"type": "array"},
                "q_inf": {"type": "number"},
                "from": {"type": "string"},
                "to": {"type": "string"},
                "p_group": {"type": "string"},
                "q_group": {"type": "string"},
            },
            "required": ["c_grid", "q_inf", "from", "to"],
            "additionalProperties": False,
        },
        "variants": {
            "type": "object",
            "additionalProperties": {"type": "object"},
        },
    },
    "required": ["schema_version", "name"],
    "additionalProperties": False,
}

_VALIDATOR = Draft202012Validator(SCENARIO_SCHEMA)


def plant_to_dict(plant: PartitionedPlant):
    d = plant.sys.to_dict()
    d["input_groups"] = [[n, s] for n, s in plant.input_groups]
    d["output_groups"] = [[n, s] for n, s in plant.output_groups]
    return d


def plant_from_dict(d) -> PartitionedPlant:
    sys = StateSpace.from_dict({k: d[k] for k in ("A", "B", "C", "D")})
    return PartitionedPlant(sys,
                            [(n, int(s)) for n, s in d["input_groups"]],
                            [(n, int(s)) for n, s in d["output_groups"]])


def _build_nonlinearity(spec) -> Nonlinearity:
    family = spec["family"]
    params = dict(spec.get("params", {}))
    if family == "qp_projection":
        from .nonlin import example_projection_pieces
        _, Lc, b = example_projection_pieces()
        H = np.array(params.pop("H", np.eye(2).tolist()), dtype=float)
        if params:
            raise ScenarioError(f"unknown qp_projection params {sorted(params)}")
        return qp_nonlinearity(H, Lc, np.asarray(b, dtype=float))
    # attractor families take keyword overrides; nested lists become tuples
    params = {k: tuple(v) if isinstance(v, list) else v
              for k, v in params.items()}
    try:
        phi, _, _ = attractor_nonlinearities(family, **params)
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"bad nonlinearity spec: {e}") from e
    return phi


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    raw: dict
    systems: dict                     # label -> StateSpace
    plant: PartitionedPlant | None
    phi: Nonlinearity | None
    controller: StateSpace | None
    structure: ControllerStructure | None
    init_ranges: tuple | None
    program: dict
    simulation: dict
    sweep: dict
    variants: tuple


def scenario_from_dict(data, variant=None) -> Scenario:
    errors = sorted(_VALIDATOR.iter_errors(data), key=lambda e: e.json_path)
    if errors:
        msgs = "; ".join(f"{e.json_path}: {e.message}" for e in errors[:3])
        raise ScenarioError(f"invalid scenario: {msgs}")
    if variant is not None:
        variants = data.get("variants", {})
        if variant not in variants:
            raise ScenarioError(f"unknown variant {variant!r}; "
                                f"have {sorted(variants)}")
        merged = dict(data)
        merged.pop("variants")
        merged.update(variants[variant])
        return scenario_from_dict(merged)

    systems = {label: StateSpace.from_dict(d)
               for label, d in data.get("systems", {}).items()}
    plant = plant_from_dict(data["plant"]) if "plant" in data else None
    phi = (_build_nonlinearity(data["nonlinearity"])
           if "nonlinearity" in data else None)
    controller = (StateSpace.from_dict(data["controller"])
                  if "controller" in data else None)
    structure = None
    init_ranges = None
    if "structure" in data:
        sd = dict(data["structure"])
        ranges = sd.pop("init_ranges", None)
        structure = ControllerStructure(**sd)
        if ranges is not None:
            init_ranges = tuple(tuple(r) for r in ranges)
            if len(init_ranges) != structure.n_params:
                raise ScenarioError("init_ranges length must match the "
                                    "parameter count")
    return Scenario(
        name=data["name"],
        description=data.get("description", ""),
        raw=data,
        systems=systems,
        plant=plant,
        phi=phi,
        controller=controller,
        structure=structure,
        init_ranges=init_ranges,
        program=data.get("program", {}),
        simulation=data.get("simulation", {}),
        sweep=data.get("sweep", {}),
        variants=tuple(sorted(data.get("variants", {}))),
    )


def load_scenario(path, variant=None) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{path}: not valid JSON ({e})") from e
    return scenario_from_dict(data, variant=variant)


def jsonable(obj):
    """Recursively convert numpy containers to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)  # "inf"/"nan" are not valid JSON numbers
    return obj


def write_result(path, payload):
    """Write a result payload deterministically (sorted keys, no timestamps)."""
    doc = {"schema_version": SCHEMA_VERSION, **jsonable(payload)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
