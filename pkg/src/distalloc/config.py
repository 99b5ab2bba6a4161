"""
Experiment configuration: a YAML document parsed into plain data.

Schema (all indices 0-based)::

    name: example1_alg1            # optional, used for output naming
    algorithm: alg1                # alg1 | alg2
    seed: 0                        # used by the `random` initial state
    graph:
      nodes: 4
      undirected: false            # true mirrors every edge
      edges:                       # [from, to] or [from, to, weight]
        - [0, 1]                   # weight defaults to 1.0
    agents:
      - resource: [45]
        set: {type: box, lower: [20], upper: [40]}
        cost:
          strong_convexity_modulus: 4.0
          terms:
            - {type: quadratic, Q: [[2.0]], b: [0.0], c: 0.5}
            - {type: norm_kink, weight: 3.0, anchor: [35]}
    params: {k1: 5, k2: 26, k3: 5, step_size: 0.001, max_time: 30}
    # or `params: auto` for gains 5% above the computed bounds and k3 = 1;
    # a mapping with `auto: true` does the same, explicit gains taking priority
    initial_state: zeros           # zeros | example1_alg2 | random | {x:, s:, w:}
    outputs: {dir: out, lyapunov: false}
    verify: false
    sweep:                         # optional variants for --sweep
      - {name: slow, params: {k1: 3}}

Set records: ``box {lower, upper}``, ``ball {center, radius}``,
``polyhedron {rows: [{normal, offset}, ...]}`` (meaning normal . y <= offset),
``product {parts: [...]}``, ``whole_space {dim}``. Cost terms:
``quadratic {Q, b, c}`` (y^T Q y + b^T y + c), ``norm_kink {weight, anchor}``,
``logsumexp_pair {scale}``, ``rational_saturation {denomscale}``. A scalar
is accepted wherever a length-one vector is expected.
"""

import copy
import re
from dataclasses import dataclass, field

import numpy as np
import yaml

from .convex import (
    Ball,
    Box,
    CostFunction,
    LogSumExpPair,
    Polyhedron,
    Product,
    Quadratic,
    RationalSaturation,
    WeightedNormKink,
    WholeSpace,
)
from .graph import Digraph
from .problem import AgentSpec, Problem

PRESETS = ("zeros", "example1_alg2", "random")
PARAM_KEYS = ("k1", "k2", "k3", "step_size", "max_time", "record_every")
OUTPUT_DEFAULTS = {"dir": "out", "trajectory": "trajectory.csv", "summary": "summary.json",
                   "lyapunov": False}


class ConfigError(ValueError):
    """Malformed configuration; carries the offending line when known."""

    def __init__(self, message, line=None, source="<config>"):
        self.message, self.line = message, line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


# -- loading with line numbers -------------------------------------------------

class _LinedDict(dict):
    line = None
    key_lines: dict = {}


class _LinedList(list):
    line = None
    item_lines: list = []


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads 1e-3 as a string; accept exponent floats without a dot
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LinedDict()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LinedList(loader.construct_object(child, deep=True) for child in node.value)
    out.line = node.start_mark.line + 1
    out.item_lines = [child.start_mark.line + 1 for child in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def _line(node, key=None):
    if key is not None and isinstance(node, _LinedDict):
        return node.key_lines.get(key, node.line)
    if isinstance(node, _LinedList) and isinstance(key, int) and key < len(node.item_lines):
        return node.item_lines[key]
    return getattr(node, "line", None)


# -- schema helpers ------------------------------------------------------------

class _Reader:
    """Schema checks that report the line of the offending entry."""

    def __init__(self, source):
        self.source = source

    def fail(self, message, node=None, key=None):
        raise ConfigError(message, _line(node, key), self.source)

    def mapping(self, node, what, required=(), optional=(), parent=None, key=None):
        if not isinstance(node, dict):
            self.fail(f"{what} must be a mapping", parent, key)
        unknown = set(node) - set(required) - set(optional)
        if unknown:
            bad = sorted(map(str, unknown))[0]
            self.fail(f"unknown key {bad!r} in {what}", node, bad)
        for k in required:
            if k not in node:
                self.fail(f"{what} is missing required key {k!r}", node)
        return node

    def number(self, node, key, what, positive=False, nonneg=False):
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{what} must be a number, got {v!r}", node, key)
        v = float(v)
        if not np.isfinite(v):
            self.fail(f"{what} must be finite", node, key)
        if positive and not v > 0:
            self.fail(f"{what} must be positive, got {v}", node, key)
        if nonneg and v < 0:
            self.fail(f"{what} must be nonnegative, got {v}", node, key)
        return v

    def integer(self, node, key, what, minimum=None):
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{what} must be an integer, got {v!r}", node, key)
        if minimum is not None and v < minimum:
            self.fail(f"{what} must be at least {minimum}, got {v}", node, key)
        return int(v)

    def boolean(self, node, key, what):
        v = node[key]
        if not isinstance(v, bool):
            self.fail(f"{what} must be true or false, got {v!r}", node, key)
        return v

    def string(self, node, key, what, choices=None):
        v = node[key]
        if not isinstance(v, str):
            self.fail(f"{what} must be a string, got {v!r}", node, key)
        if choices is not None and v not in choices:
            self.fail(f"{what} must be one of {', '.join(choices)}, got {v!r}", node, key)
        return v

    def vector(self, node, key, what):
        v = node[key]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v]
        if not isinstance(v, list) or not v:
            self.fail(f"{what} must be a nonempty list of numbers", node, key)
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not np.isfinite(x):
                self.fail(f"{what}[{i}] must be a finite number, got {x!r}", node, key)
        return [float(x) for x in v]

    def matrix(self, node, key, what):
        v = node[key]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [[v]]
        if not isinstance(v, list) or not v:
            self.fail(f"{what} must be a nonempty list of rows", node, key)
        rows = []
        for i in range(len(v)):
            rows.append(self.vector(v, i, f"{what}[{i}]"))
        if len({len(r) for r in rows}) != 1:
            self.fail(f"{what} rows must have equal length", node, key)
        return rows


SET_FIELDS = {
    "box": (("lower", "upper"), ()),
    "ball": (("center", "radius"), ()),
    "polyhedron": (("rows",), ()),
    "product": (("parts",), ()),
    "whole_space": (("dim",), ()),
}
TERM_FIELDS = {
    "quadratic": (("Q",), ("b", "c")),
    "norm_kink": (("weight", "anchor"), ()),
    "logsumexp_pair": (("scale",), ()),
    "rational_saturation": (("denomscale",), ()),
}


def _read_set(r: _Reader, node, what, parent, key):
    if not isinstance(node, dict) or "type" not in node:
        r.fail(f"{what} must be a mapping with a 'type' key", parent, key)
    kind = r.string(node, "type", f"{what}.type", tuple(SET_FIELDS))
    req, opt = SET_FIELDS[kind]
    r.mapping(node, what, ("type",) + req, opt)
    if kind == "box":
        lo, hi = r.vector(node, "lower", f"{what}.lower"), r.vector(node, "upper", f"{what}.upper")
        if len(lo) != len(hi):
            r.fail(f"{what} bounds have different lengths", node, "upper")
        return {"type": kind, "lower": lo, "upper": hi}
    if kind == "ball":
        return {"type": kind, "center": r.vector(node, "center", f"{what}.center"),
                "radius": r.number(node, "radius", f"{what}.radius")}
    if kind == "polyhedron":
        rows = node["rows"]
        if not isinstance(rows, list) or not rows:
            r.fail(f"{what}.rows must be a nonempty list", node, "rows")
        out = []
        for i, row in enumerate(rows):
            r.mapping(row, f"{what}.rows[{i}]", ("normal", "offset"), (), rows, i)
            out.append({"normal": r.vector(row, "normal", f"{what}.rows[{i}].normal"),
                        "offset": r.number(row, "offset", f"{what}.rows[{i}].offset")})
        if len({len(o["normal"]) for o in out}) != 1:
            r.fail(f"{what}.rows normals must have equal length", node, "rows")
        return {"type": kind, "rows": out}
    if kind == "product":
        parts = node["parts"]
        if not isinstance(parts, list) or not parts:
            r.fail(f"{what}.parts must be a nonempty list", node, "parts")
        return {"type": kind,
                "parts": [_read_set(r, q, f"{what}.parts[{i}]", parts, i) for i, q in enumerate(parts)]}
    return {"type": kind, "dim": r.integer(node, "dim", f"{what}.dim", 1)}


def _read_term(r: _Reader, node, what, parent, key):
    if not isinstance(node, dict) or "type" not in node:
        r.fail(f"{what} must be a mapping with a 'type' key", parent, key)
    kind = r.string(node, "type", f"{what}.type", tuple(TERM_FIELDS))
    req, opt = TERM_FIELDS[kind]
    r.mapping(node, what, ("type",) + req, opt)
    if kind == "quadratic":
        Q = r.matrix(node, "Q", f"{what}.Q")
        out = {"type": kind, "Q": Q}
        out["b"] = r.vector(node, "b", f"{what}.b") if "b" in node else [0.0] * len(Q)
        out["c"] = r.number(node, "c", f"{what}.c") if "c" in node else 0.0
        return out
    if kind == "norm_kink":
        return {"type": kind, "weight": r.number(node, "weight", f"{what}.weight", nonneg=True),
                "anchor": r.vector(node, "anchor", f"{what}.anchor")}
    if kind == "logsumexp_pair":
        return {"type": kind, "scale": r.number(node, "scale", f"{what}.scale")}
    return {"type": kind, "denomscale": r.number(node, "denomscale", f"{what}.denomscale", positive=True)}


# -- the experiment ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Plain-data experiment description; see the module docstring."""

    nodes: int
    edges: list
    agents: list
    algorithm: str = "alg1"
    undirected: bool = False
    name: str = "experiment"
    seed: int = 0
    params: object = "auto"
    initial_state: object = "zeros"
    outputs: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))
    verify: bool = False
    sweep: list = field(default_factory=list)

    def to_dict(self):
        """Document form, re-parseable by :func:`parse_config`."""
        return {
            "name": self.name,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "graph": {"nodes": self.nodes, "undirected": self.undirected,
                      "edges": [list(e) for e in self.edges]},
            "agents": copy.deepcopy(self.agents),
            "params": copy.deepcopy(self.params),
            "initial_state": copy.deepcopy(self.initial_state),
            "outputs": dict(self.outputs),
            "verify": self.verify,
            "sweep": copy.deepcopy(self.sweep),
        }

    @classmethod
    def from_dict(cls, doc, source="<config>"):
        return _read_experiment(_Reader(source), doc)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, **changes):
        """Copy with top-level fields replaced and ``params`` entries merged."""
        out = copy.deepcopy(self)
        params = changes.pop("params", None)
        for k, v in changes.items():
            setattr(out, k, v)
        if params:
            if out.params == "auto":
                out.params = {"auto": True}
            out.params = {**out.params, **params}
        return out


def _read_params(r: _Reader, doc):
    node = doc["params"]
    if node == "auto":
        return "auto"
    if not isinstance(node, dict):
        r.fail("params must be 'auto' or a mapping", doc, "params")
    return _read_param_map(r, node, "params")


def _read_param_map(r: _Reader, node, what, partial=False):
    r.mapping(node, what, (), PARAM_KEYS + ("auto",))
    out = {}
    if node.get("auto", False) is not False:
        r.boolean(node, "auto", f"{what}.auto")
        out["auto"] = True
    elif not partial:
        for k in ("k1", "k2", "k3"):
            if k not in node:
                r.fail(f"{what} is missing required key {k!r} (or set auto: true)", node)
    for k in PARAM_KEYS:
        if k in node:
            if k == "record_every":
                out[k] = r.integer(node, k, f"{what}.{k}", 1)
            elif k in ("k1", "k2", "k3"):
                # zero or negative gains are a validation matter, reported later
                out[k] = r.number(node, k, f"{what}.{k}")
            else:
                out[k] = r.number(node, k, f"{what}.{k}", positive=True)
    return out


def _read_initial(r: _Reader, doc):
    node = doc["initial_state"]
    if isinstance(node, str):
        return r.string(doc, "initial_state", "initial_state", PRESETS)
    r.mapping(node, "initial_state", (), ("x", "s", "w"), doc, "initial_state")
    return {k: r.vector(node, k, f"initial_state.{k}") for k in ("x", "s", "w") if k in node}


def _read_experiment(r: _Reader, doc):
    top = ("name", "algorithm", "seed", "graph", "agents", "params", "initial_state",
           "outputs", "verify", "sweep")
    if doc is None:
        r.fail("empty configuration")
    r.mapping(doc, "configuration", ("graph", "agents"), top)
    cfg = {}
    if "name" in doc:
        cfg["name"] = r.string(doc, "name", "name")
    if "algorithm" in doc:
        cfg["algorithm"] = r.string(doc, "algorithm", "algorithm", ("alg1", "alg2"))
    if "seed" in doc:
        cfg["seed"] = r.integer(doc, "seed", "seed", 0)
    g = r.mapping(doc["graph"], "graph", ("nodes", "edges"), ("undirected",), doc, "graph")
    cfg["nodes"] = r.integer(g, "nodes", "graph.nodes", 2)
    if "undirected" in g:
        cfg["undirected"] = r.boolean(g, "undirected", "graph.undirected")
    edges = g["edges"]
    if not isinstance(edges, list):
        r.fail("graph.edges must be a list", g, "edges")
    cfg["edges"] = []
    for i, e in enumerate(edges):
        if not isinstance(e, list) or len(e) not in (2, 3):
            r.fail(f"graph.edges[{i}] must be [from, to] or [from, to, weight]", edges, i)
        for j in (0, 1):
            if isinstance(e[j], bool) or not isinstance(e[j], int) or not 0 <= e[j] < cfg["nodes"]:
                r.fail(f"graph.edges[{i}] endpoint {e[j]!r} is not a node index in [0, {cfg['nodes']})",
                       edges, i)
        w = r.number(e, 2, f"graph.edges[{i}] weight", positive=True) if len(e) == 3 else 1.0
        cfg["edges"].append([int(e[0]), int(e[1]), w])
    agents = doc["agents"]
    if not isinstance(agents, list) or not agents:
        r.fail("agents must be a nonempty list", doc, "agents")
    cfg["agents"] = []
    for i, a in enumerate(agents):
        what = f"agents[{i}]"
        r.mapping(a, what, ("resource", "set", "cost"), (), agents, i)
        cost = r.mapping(a["cost"], f"{what}.cost", ("terms",), ("strong_convexity_modulus",), a, "cost")
        terms = cost["terms"]
        if not isinstance(terms, list) or not terms:
            r.fail(f"{what}.cost.terms must be a nonempty list", cost, "terms")
        omega = (r.number(cost, "strong_convexity_modulus", f"{what}.cost.strong_convexity_modulus",
                          nonneg=True) if "strong_convexity_modulus" in cost else 0.0)
        cfg["agents"].append({
            "resource": r.vector(a, "resource", f"{what}.resource"),
            "set": _read_set(r, a["set"], f"{what}.set", a, "set"),
            "cost": {"strong_convexity_modulus": omega,
                     "terms": [_read_term(r, t, f"{what}.cost.terms[{j}]", terms, j)
                               for j, t in enumerate(terms)]},
        })
    if "params" in doc:
        cfg["params"] = _read_params(r, doc)
    if "initial_state" in doc:
        cfg["initial_state"] = _read_initial(r, doc)
    outputs = dict(OUTPUT_DEFAULTS)
    if "outputs" in doc:
        o = r.mapping(doc["outputs"], "outputs", (), tuple(OUTPUT_DEFAULTS), doc, "outputs")
        for k in ("dir", "trajectory", "summary"):
            if k in o:
                outputs[k] = r.string(o, k, f"outputs.{k}")
        if "lyapunov" in o:
            outputs["lyapunov"] = r.boolean(o, "lyapunov", "outputs.lyapunov")
    cfg["outputs"] = outputs
    if "verify" in doc:
        cfg["verify"] = r.boolean(doc, "verify", "verify")
    if "sweep" in doc:
        sweep = doc["sweep"]
        if not isinstance(sweep, list):
            r.fail("sweep must be a list", doc, "sweep")
        cfg["sweep"] = []
        names = set()
        for i, v in enumerate(sweep):
            r.mapping(v, f"sweep[{i}]", ("name", "params"), (), sweep, i)
            name = r.string(v, "name", f"sweep[{i}].name")
            if name in names or not name or "/" in name:
                r.fail(f"sweep[{i}].name must be a unique, nonempty, slash-free string", v, "name")
            names.add(name)
            if not isinstance(v["params"], dict):
                r.fail(f"sweep[{i}].params must be a mapping", v, "params")
            cfg["sweep"].append({"name": name,
                                 "params": _read_param_map(r, v["params"], f"sweep[{i}].params", True)})
    return ExperimentConfig(**cfg)


def parse_config(text, source="<config>") -> ExperimentConfig:
    """Parse YAML text; raises :class:`ConfigError` with a line number."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except ConfigError as e:
        raise ConfigError(e.message, e.line, source) from None
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {e.problem or e.context}", line, source) from None
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML error: {e}", None, source) from None
    return ExperimentConfig.from_dict(doc, source)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


# -- building domain objects ---------------------------------------------------

def build_set(rec):
    kind = rec["type"]
    if kind == "box":
        return Box(rec["lower"], rec["upper"])
    if kind == "ball":
        return Ball(rec["center"], rec["radius"])
    if kind == "polyhedron":
        return Polyhedron([r["normal"] for r in rec["rows"]], [r["offset"] for r in rec["rows"]])
    if kind == "product":
        return Product([build_set(q) for q in rec["parts"]])
    return WholeSpace(rec["dim"])


def build_term(rec):
    kind = rec["type"]
    if kind == "quadratic":
        return Quadratic(rec["Q"], rec["b"], rec["c"])
    if kind == "norm_kink":
        return WeightedNormKink(rec["weight"], rec["anchor"])
    if kind == "logsumexp_pair":
        return LogSumExpPair(rec["scale"])
    return RationalSaturation(rec["denomscale"])


def build_graph(cfg: ExperimentConfig) -> Digraph:
    edges = [tuple(e) for e in cfg.edges]
    return Digraph.from_edges(cfg.nodes, edges, undirected=cfg.undirected)


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Domain objects from the config. Constructor errors (box bounds out of
    order, indefinite ``Q``, ...) surface as ``ValueError`` naming the agent."""
    agents = []
    for i, a in enumerate(cfg.agents):
        try:
            cost = CostFunction([build_term(t) for t in a["cost"]["terms"]],
                                strong_convexity_modulus=a["cost"]["strong_convexity_modulus"])
            agents.append(AgentSpec(cost, build_set(a["set"]), a["resource"]))
        except ValueError as e:
            raise ValueError(f"agent {i}: {e}") from None
    return Problem(agents, build_graph(cfg))

