"""Experiment configuration: JSON schema, validation and model construction."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .graph import Graph, build_chain, build_lattice, build_tree

KINDS = ("constants", "reduce-ol", "reduce-dist", "reduce-det", "decay-v", "perturb")

_number_or_array = {"type": ["number", "array"]}
_per_player = {
    "oneOf": [
        {"type": "number"},
        {"type": "array"},
        {"type": "object", "properties": {"cycle": {"type": "array", "minItems": 1}},
         "required": ["cycle"], "additionalProperties": False},
    ]
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["graph"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "graph": {
            "type": "object",
            "required": ["generator"],
            "properties": {"generator": {"enum": ["chain", "lattice", "tree", "inline"]}},
            "allOf": [
                {"if": {"properties": {"generator": {"const": "chain"}}},
                 "then": {"properties": {"generator": {}, "n": {"type": "integer", "minimum": 1},
                                         "cyclic": {"type": "boolean"}},
                          "required": ["n"], "additionalProperties": False}},
                {"if": {"properties": {"generator": {"const": "lattice"}}},
                 "then": {"properties": {"generator": {}, "radius": {"type": "integer", "minimum": 1},
                                         "orientation": {"enum": ["undirected", "outward", "perturbed"]},
                                         "h": {"type": "integer", "minimum": 1}},
                          "required": ["radius"], "additionalProperties": False}},
                {"if": {"properties": {"generator": {"const": "tree"}}},
                 "then": {"properties": {"generator": {}, "branching": {"type": "integer", "minimum": 1},
                                         "depth": {"type": "integer", "minimum": 0}},
                          "required": ["branching", "depth"], "additionalProperties": False}},
                {"if": {"properties": {"generator": {"const": "inline"}}},
                 "then": {"properties": {"generator": {}, "n": {"type": "integer", "minimum": 1},
                                         "in_neighbors": {"type": "array",
                                                          "items": {"type": "array",
                                                                    "items": {"type": "integer", "minimum": 0}}},
                                         "labels": {"type": "array"}},
                          "required": ["n", "in_neighbors"], "additionalProperties": False}},
            ],
        },
        "game": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["lq", "det"]},
                "d": {"type": "integer", "minimum": 1, "maximum": 8},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "kappa": _per_player,
                "Q": _number_or_array,
                "mu": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "G": _number_or_array,
                "sigma": _number_or_array,
                "init_mean": _per_player,
                "init_cov": _number_or_array,
                "x0": _per_player,
                "coupling": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"kind": {"enum": ["quadratic", "smoothed"]},
                                   "lam": {"type": "number", "exclusiveMinimum": 0},
                                   "eps": {"type": "number", "minimum": 0}},
                },
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "root": {"type": "integer", "minimum": 0},
                "radii": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "boundary_policy": {"enum": ["frozen", "full_mean"]},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "r": {"type": "integer", "minimum": 0, "maximum": 200},
                "perturb": {
                    "type": "object", "additionalProperties": False, "required": ["player"],
                    "properties": {"player": {"type": "integer", "minimum": 0},
                                   "shift": _number_or_array,
                                   "cov": _number_or_array},
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 2, "maximum": 1000000},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "mc_paths": {"type": "integer", "minimum": 1},
                "check": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

SOLVER_DEFAULTS = {"steps": 2000, "tol": 1e-10, "damping": 0.5, "max_iter": 500, "seed": 0,
                   "mc_paths": 10000, "check": True}


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    validate_config(doc)
    return doc


def validate_config(doc) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc


def build_graph(gspec: dict) -> Graph:
    kind = gspec["generator"]
    try:
        if kind == "chain":
            return build_chain(gspec["n"], gspec.get("cyclic", True))
        if kind == "lattice":
            return build_lattice(gspec["radius"], gspec.get("orientation", "undirected"), gspec.get("h"))
        if kind == "tree":
            return build_tree(gspec["branching"], gspec["depth"])
        return Graph.from_json_dict(gspec)
    except ValueError as exc:
        raise ConfigError(f"graph: {exc}") from exc


def per_player(value, n: int, name: str):
    """Expand ``{"cycle": [...]}`` to a length-n list; pass other values through."""
    if isinstance(value, dict):
        cyc = value["cycle"]
        return [cyc[i % len(cyc)] for i in range(n)]
    if isinstance(value, list) and len(value) != n and not _is_matrixish(value):
        raise ConfigError(f"game.{name}: expected {n} entries, got {len(value)}")
    return value


def _is_matrixish(value) -> bool:
    return len(value) > 0 and isinstance(value[0], list)


def solver_params(doc: dict, steps=None, seed=None) -> dict:
    out = dict(SOLVER_DEFAULTS)
    out.update(doc.get("solver", {}))
    if steps is not None:
        out["steps"] = steps
    if seed is not None:
        out["seed"] = seed
    if out["steps"] < 2:
        raise ConfigError("solver.steps must be >= 2")
    return out


def build_lq(doc: dict, g: Graph):
    from .lq_openloop import LqGameSpec
    gm = doc.get("game", {})
    if gm.get("type", "lq") != "lq":
        raise ConfigError("this experiment needs an 'lq' game")
    n = g.n
    try:
        return LqGameSpec.build(
            g, d=gm.get("d", 1), T=gm.get("T", 1.0), kappa=per_player(gm.get("kappa", 1.0), n, "kappa"),
            Q=gm.get("Q", 1.0), mu=gm.get("mu", 0.0), G=gm.get("G", 0.0), sigma=gm.get("sigma", 1.0),
            init_mean=per_player(gm.get("init_mean", 0.0), n, "init_mean"), init_cov=gm.get("init_cov", 1.0))
    except ValueError as exc:
        raise ConfigError(f"game: {exc}") from exc


def build_det(doc: dict, g: Graph):
    from .det_pontryagin import ConvexCoupling, DetGameSpec
    gm = doc.get("game", {})
    if gm.get("type") != "det":
        raise ConfigError("this experiment needs a 'det' game")
    n = g.n
    try:
        c = gm.get("coupling", {})
        coupling = ConvexCoupling(c.get("kind", "quadratic"), c.get("lam", 1.0), c.get("eps", 0.0))
        return DetGameSpec.build(g, coupling, d=gm.get("d", 1), T=gm.get("T", 1.0),
                                 kappa=per_player(gm.get("kappa", 1.0), n, "kappa"), mu=gm.get("mu", 0.0),
                                 G=gm.get("G", 0.0), x0=per_player(gm.get("x0", 0.0), n, "x0"))
    except ValueError as exc:
        raise ConfigError(f"game: {exc}") from exc


def check_root(doc: dict, g: Graph) -> int:
    root = doc.get("experiment", {}).get("root", 0)
    if root >= g.n:
        raise ConfigError(f"experiment.root={root} out of range for {g.n} players")
    return root
