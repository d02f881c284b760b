"""JSON model files: a sheaf plus optional opinions, stubbornness and adaptation.

Document layout (all matrices row-major with explicit shapes)::

    {
      "format": "discourse-sheaf/1",
      "vertices": [{"id": "a", "dim": 2}, ...],
      "edges": [{"id": "e", "tail": "a", "head": "b", "dim": 1}, ...],
      "restrictions": [{"vertex": "a", "edge": "e", "shape": [1, 2], "data": [...]}, ...],
      "cochain": {"a": [...], ...},                                   optional
      "stubborn": [{"vertex": "a", "basis": {"shape": [2, 1], "data": [...]},
                    "values": [...]}, ...],                            optional
      "adaptation": {"adapting": [["a", "e"], ...]}  or  {"frozen": [...]},   optional
      "policy": {"default": "UniversalAdaptation", "edges": {"e": "Outreach"}},  optional
      "parameters": {"alpha": 1.0, ...}                                optional
    }

:func:`dumps_model` emits a canonical form (fixed key order, shortest
round-trip floats), so ``dumps(loads(text)) == text`` for canonical text.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SchemaError, SheafError
from .free_opinions import StubbornSpec
from .joint import ScenarioPolicy
from .sheaf import Graph, Sheaf
from .structure import AdaptationSpec

FORMAT = "discourse-sheaf/1"


@dataclass
class Model:
    sheaf: Sheaf
    cochain: np.ndarray | None = None
    stubborn: StubbornSpec | None = None
    adaptation: AdaptationSpec | None = None
    policy: ScenarioPolicy | None = None
    parameters: dict = field(default_factory=dict)

    def adaptation_or_policy(self) -> AdaptationSpec | None:
        if self.adaptation is not None:
            return self.adaptation
        if self.policy is not None:
            return self.policy.compile(self.sheaf, self.stubborn)
        return None

    def __iter__(self):
        return iter((self.sheaf, self.stubborn, self.adaptation, self.policy, self.cochain))


# -- reading ----------------------------------------------------------------


def _get(obj, key, path, kind=None, required=True):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if key not in obj:
        if required:
            raise SchemaError(f"{path}.{key}" if path else key, "missing field")
        return None
    val = obj[key]
    where = f"{path}.{key}" if path else key
    if kind is not None and not _is(val, kind):
        raise SchemaError(where, f"expected {kind}")
    return val


def _is(val, kind) -> bool:
    if kind == "string":
        return isinstance(val, str)
    if kind == "int":
        return isinstance(val, int) and not isinstance(val, bool)
    if kind == "number":
        return isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val)
    if kind == "list":
        return isinstance(val, list)
    if kind == "object":
        return isinstance(val, dict)
    raise AssertionError(kind)


def _numbers(val, path) -> list:
    if not isinstance(val, list):
        raise SchemaError(path, "expected a list of numbers")
    for i, v in enumerate(val):
        if not _is(v, "number"):
            raise SchemaError(f"{path}[{i}]", "expected a finite number")
    return [float(v) for v in val]


def _matrix(obj, path) -> np.ndarray:
    shape = _get(obj, "shape", path, "list")
    if len(shape) != 2 or not all(_is(s, "int") and s >= 0 for s in shape):
        raise SchemaError(f"{path}.shape", "expected two nonnegative integers")
    data = _numbers(_get(obj, "data", path), f"{path}.data")
    if len(data) != shape[0] * shape[1]:
        raise SchemaError(f"{path}.data", f"has {len(data)} entries, shape {shape} needs {shape[0] * shape[1]}")
    return np.array(data, dtype=float).reshape(shape)


def _pairs(val, path) -> list:
    if not isinstance(val, list):
        raise SchemaError(path, "expected a list of [vertex, edge] pairs")
    out = []
    for i, p in enumerate(val):
        if not (isinstance(p, list) and len(p) == 2 and all(isinstance(s, str) for s in p)):
            raise SchemaError(f"{path}[{i}]", "expected [vertex, edge]")
        out.append(tuple(p))
    return out


def model_from_dict(doc) -> Model:
    """Validate a parsed document and build every object it describes."""
    if not isinstance(doc, dict):
        raise SchemaError("", "document must be a JSON object")
    fmt = _get(doc, "format", "", "string")
    if fmt != FORMAT:
        raise SchemaError("format", f"unsupported format {fmt!r}")
    known = {"format", "vertices", "edges", "restrictions", "cochain", "stubborn", "adaptation", "policy", "parameters"}
    extra = sorted(set(doc) - known)
    if extra:
        raise SchemaError(extra[0], "unknown field")

    vdims = {}
    for i, v in enumerate(_get(doc, "vertices", "", "list")):
        p = f"vertices[{i}]"
        vid = _get(v, "id", p, "string")
        dim = _get(v, "dim", p, "int")
        if dim < 0:
            raise SchemaError(f"{p}.dim", "must be nonnegative")
        if vid in vdims:
            raise SchemaError(f"{p}.id", f"duplicate vertex {vid!r}")
        vdims[vid] = dim

    edges, edims = [], {}
    for i, e in enumerate(_get(doc, "edges", "", "list")):
        p = f"edges[{i}]"
        eid = _get(e, "id", p, "string")
        tail = _get(e, "tail", p, "string")
        head = _get(e, "head", p, "string")
        dim = _get(e, "dim", p, "int")
        if dim < 0:
            raise SchemaError(f"{p}.dim", "must be nonnegative")
        if eid in edims:
            raise SchemaError(f"{p}.id", f"duplicate edge {eid!r}")
        for key, end in (("tail", tail), ("head", head)):
            if end not in vdims:
                raise SchemaError(f"{p}.{key}", f"unknown vertex {end!r}")
        if tail == head:
            raise SchemaError(p, "self-loops are not allowed")
        edges.append((eid, tail, head))
        edims[eid] = dim

    graph = Graph(tuple(vdims), tuple(edges))
    maps = {}
    valid = set(graph.incidences())
    for i, r in enumerate(_get(doc, "restrictions", "", "list")):
        p = f"restrictions[{i}]"
        key = (_get(r, "vertex", p, "string"), _get(r, "edge", p, "string"))
        if key not in valid:
            raise SchemaError(p, f"{key} is not an incidence")
        if key in maps:
            raise SchemaError(p, f"duplicate restriction for {key}")
        m = _matrix(r, p)
        if m.shape != (edims[key[1]], vdims[key[0]]):
            raise DimensionMismatch(f"{p}.shape", f"expected {[edims[key[1]], vdims[key[0]]]}")
        maps[key] = m
    missing = [k for k in graph.incidences() if k not in maps]
    if missing:
        raise SchemaError("restrictions", f"missing map for incidence {missing[0]}")
    sheaf = Sheaf(graph, vdims, edims, maps)

    model = Model(sheaf)
    cochain = _get(doc, "cochain", "", "object", required=False)
    if cochain is not None:
        blocks = {}
        for v in vdims:
            if v not in cochain:
                raise SchemaError(f"cochain.{v}", "missing vertex")
            vals = _numbers(cochain[v], f"cochain.{v}")
            if len(vals) != vdims[v]:
                raise DimensionMismatch(f"cochain.{v}", f"has length {len(vals)}, stalk dimension is {vdims[v]}")
            blocks[v] = vals
        extra = sorted(set(cochain) - set(vdims))
        if extra:
            raise SchemaError(f"cochain.{extra[0]}", "unknown vertex")
        model.cochain = sheaf.stack0(blocks)

    stubborn = _get(doc, "stubborn", "", "list", required=False)
    if stubborn is not None:
        bases, values = {}, {}
        for i, s in enumerate(stubborn):
            p = f"stubborn[{i}]"
            v = _get(s, "vertex", p, "string")
            if v not in vdims:
                raise SchemaError(f"{p}.vertex", f"unknown vertex {v!r}")
            if v in bases:
                raise SchemaError(f"{p}.vertex", f"duplicate vertex {v!r}")
            b = _matrix(_get(s, "basis", p, "object"), f"{p}.basis")
            if b.shape[0] != vdims[v]:
                raise DimensionMismatch(f"{p}.basis.shape", f"expected {vdims[v]} rows")
            vals = _numbers(_get(s, "values", p), f"{p}.values")
            if len(vals) != b.shape[1]:
                raise DimensionMismatch(f"{p}.values", f"expected {b.shape[1]} values")
            bases[v], values[v] = b, vals
        try:
            model.stubborn = StubbornSpec(bases, values)
        except SheafError as exc:
            raise SchemaError("stubborn", str(exc)) from exc

    adapt = _get(doc, "adaptation", "", "object", required=False)
    if adapt is not None:
        keys = set(adapt)
        if len(keys) != 1 or not keys <= {"adapting", "frozen"}:
            raise SchemaError("adaptation", "expected exactly one of 'adapting' or 'frozen'")
        (kind,) = keys
        pairs = _pairs(adapt[kind], f"adaptation.{kind}")
        for i, pr in enumerate(pairs):
            if pr not in valid:
                raise SchemaError(f"adaptation.{kind}[{i}]", f"{pr} is not an incidence")
        model.adaptation = (
            AdaptationSpec(graph, frozenset(pairs)) if kind == "adapting" else AdaptationSpec.frozen(graph, pairs)
        )

    pol = _get(doc, "policy", "", "object", required=False)
    if pol is not None:
        default = _get(pol, "default", "policy", "string", required=False) or "UniversalAdaptation"
        labels = _get(pol, "edges", "policy", "object", required=False) or {}
        try:
            model.policy = ScenarioPolicy(labels, default)
            compiled = model.policy.compile(sheaf, model.stubborn)
        except SheafError as exc:
            raise SchemaError("policy", str(exc)) from exc
        if model.adaptation is not None and model.adaptation != compiled:
            raise SchemaError("policy", "disagrees with the adaptation section")

    params = _get(doc, "parameters", "", "object", required=False)
    if params is not None:
        for k, v in params.items():
            if not _is(v, "number"):
                raise SchemaError(f"parameters.{k}", "expected a finite number")
        model.parameters = {k: float(v) for k, v in params.items()}
    return model


def loads_model(text: str) -> Model:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def load_model(path) -> Model:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise SchemaError("", f"not UTF-8 text: {exc}") from exc
    return loads_model(text)


# -- writing ----------------------------------------------------------------


def _mat(m: np.ndarray) -> dict:
    return {"shape": [int(m.shape[0]), int(m.shape[1])], "data": [float(v) for v in np.asarray(m).ravel()]}


def model_to_dict(model: Model) -> dict:
    sh = model.sheaf
    g = sh.graph
    doc = {
        "format": FORMAT,
        "vertices": [{"id": v, "dim": sh.vertex_dims[v]} for v in g.vertices],
        "edges": [{"id": e, "tail": t, "head": h, "dim": sh.edge_dims[e]} for e, t, h in g.edges],
        "restrictions": [
            {"vertex": v, "edge": e, **_mat(sh.restrictions[(v, e)])} for v, e in g.incidences()
        ],
    }
    if model.cochain is not None:
        doc["cochain"] = {v: [float(a) for a in b] for v, b in sh.split0(model.cochain).items()}
    if model.stubborn is not None:
        doc["stubborn"] = [
            {"vertex": v, "basis": _mat(model.stubborn.bases[v]), "values": [float(a) for a in model.stubborn.values[v]]}
            for v in g.vertices
            if v in model.stubborn.bases
        ]
    if model.adaptation is not None:
        doc["adaptation"] = {"adapting": [list(p) for p in model.adaptation.ordered()]}
    if model.policy is not None:
        doc["policy"] = {
            "default": model.policy.default,
            "edges": {e: model.policy.labels[e] for e in g.edge_ids if e in model.policy.labels},
        }
    if model.parameters:
        doc["parameters"] = {k: float(model.parameters[k]) for k in sorted(model.parameters)}
    return doc


def dumps_model(model: Model) -> str:
    return json.dumps(model_to_dict(model), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def save_model(model: Model, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


# -- delimited tables -------------------------------------------------------


def write_csv(path, columns: dict) -> None:
    """Write equal-length columns; floats use ``repr`` so they read back exactly."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns have different lengths {sorted(lengths)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("", "empty CSV file")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        try:
            out[name] = np.array([float(r[j]) for r in body])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"column {name!r}", f"unreadable value: {exc}") from exc
    return out
