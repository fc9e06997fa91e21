"""JSON problem/model files and CSV traces.

Floats are written with ``repr`` precision (Python's ``json`` default), so a
write followed by a read reproduces every stored number bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError
from .graph import build_graph
from .kalman import StateSpaceModel
from .params import PMatrixSet, custom
from .pdmm import Trace, TraceRecord
from .problem import Problem, build_problem

TRACE_HEADER = ["iteration", "active_node", "feasibility", "objective", "err_vs_oracle"]


class FileFormatError(ValidationError):
    """A file is syntactically valid but does not follow the expected layout."""


@dataclass(frozen=True, eq=False)
class ProblemFile:
    problem: Problem
    root: int | None = None
    P: PMatrixSet | None = None


@dataclass(frozen=True, eq=False)
class ModelFile:
    model: StateSpaceModel
    measurements: np.ndarray | None = None


def _matrix(value, rows: int, cols: int, what: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.size == rows * cols and arr.ndim <= 1:
        arr = arr.reshape(rows, cols)
    if arr.shape != (rows, cols):
        raise DimensionError(f"{what}: expected shape ({rows}, {cols}), got {arr.shape}")
    return arr


def _vector(value, n: int, what: str) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise DimensionError(f"{what}: expected length {n}, got {arr.size}")
    return arr


def _field(doc: dict, key: str, what: str):
    if key not in doc:
        raise FileFormatError(f"{what}: missing field '{key}'")
    return doc[key]


def _load(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path}: top-level JSON value must be an object")
    return doc


def _dump(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# ------------------------------------------------------------ problems

def problem_from_dict(doc: dict) -> ProblemFile:
    nodes = sorted(_field(doc, "nodes", "problem"), key=lambda n: int(_field(n, "id", "node")))
    ids = [int(n["id"]) for n in nodes]
    if ids != list(range(len(nodes))):
        raise FileFormatError(f"node ids must be 0 .. {len(nodes) - 1} without gaps, got {ids}")
    dims = [int(_field(n, "dim", f"node {n['id']}")) for n in nodes]
    objectives = [(_matrix(_field(n, "Sigma", f"node {i}"), d, d, f"node {i} Sigma"),
                   _vector(_field(n, "a", f"node {i}"), d, f"node {i} a"))
                  for i, (n, d) in enumerate(zip(nodes, dims))]
    edges_doc = doc.get("edges", [])
    pairs = [(int(_field(e, "i", "edge")), int(_field(e, "j", "edge"))) for e in edges_doc]
    g = build_graph(len(nodes), pairs)
    constraints = {}
    for (i, j), e in zip(pairs, edges_doc):
        c = np.array(_field(e, "c", f"edge ({i}, {j})"), dtype=float).reshape(-1)
        what = f"edge ({i}, {j})"
        constraints[(i, j)] = (_matrix(_field(e, "A_i_on_j", what), c.size, dims[i], what + " A_i_on_j"),
                               _matrix(_field(e, "A_j_on_i", what), c.size, dims[j], what + " A_j_on_i"),
                               c)
    p = build_problem(g, objectives, constraints)
    root = doc.get("root")
    if root is not None:
        root = int(root)
        if not 0 <= root < len(nodes):
            raise FileFormatError(f"root {root} is not a node id")
    P = None
    if doc.get("P") is not None:
        given = {}
        for entry in doc["P"]:
            i, j = int(_field(entry, "i", "P entry")), int(_field(entry, "j", "P entry"))
            given[(min(i, j), max(i, j))] = entry
        mats = []
        for (i, j), n in zip(g.edges, p.edge_dims):
            if (i, j) not in given:
                raise FileFormatError(f"P override lacks edge ({i}, {j})")
            mats.append(_matrix(_field(given[(i, j)], "P", "P entry"), n, n, f"P for edge ({i}, {j})"))
        P = custom(p, mats)
    return ProblemFile(p, root, P)


def problem_to_dict(p: Problem, root: int | None = None, P: PMatrixSet | None = None) -> dict:
    doc: dict = {
        "nodes": [{"id": i, "dim": o.dim, "Sigma": o.Sigma.reshape(-1).tolist(), "a": o.a.tolist()}
                  for i, o in enumerate(p.objectives)],
        "edges": [{"i": i, "j": j, "A_i_on_j": con.A_i_on_j.reshape(-1).tolist(),
                   "A_j_on_i": con.A_j_on_i.reshape(-1).tolist(), "c": con.c.tolist()}
                  for (i, j), con in zip(p.graph.edges, p.constraints)],
    }
    if root is not None:
        doc["root"] = int(root)
    if P is not None:
        doc["P"] = [{"i": i, "j": j, "P": P[(i, j)].reshape(-1).tolist()} for i, j in P.edges]
    return doc


def read_problem(path) -> ProblemFile:
    return problem_from_dict(_load(path))


def write_problem(path, p: Problem, root: int | None = None, P: PMatrixSet | None = None) -> None:
    _dump(problem_to_dict(p, root, P), path)


def problems_equal(p: Problem, q: Problem) -> bool:
    """Field-wise, bit-exact comparison."""
    if p.graph.node_count != q.graph.node_count or p.graph.edges != q.graph.edges:
        return False
    for a, b in zip(p.objectives, q.objectives):
        if not (np.array_equal(a.Sigma, b.Sigma) and np.array_equal(a.a, b.a)):
            return False
    for a, b in zip(p.constraints, q.constraints):
        if not all(np.array_equal(x, y) for x, y in
                   ((a.A_i_on_j, b.A_i_on_j), (a.A_j_on_i, b.A_j_on_i), (a.c, b.c))):
            return False
    return True


# -------------------------------------------------------------- models

def _per_step(doc: dict, key: str, horizon: int, rows: int, cols: int) -> np.ndarray:
    arr = np.array(_field(doc, key, "model"), dtype=float)
    if arr.ndim <= 2 and arr.size == rows * cols:
        return np.repeat(arr.reshape(rows, cols)[None], horizon, axis=0)
    if arr.size == horizon * rows * cols and arr.ndim in (2, 3) and arr.shape[0] == horizon:
        return arr.reshape(horizon, rows, cols)
    raise DimensionError(f"{key}: expected ({rows}, {cols}) or ({horizon}, {rows}, {cols}) values, "
                         f"got shape {arr.shape}")


def model_from_dict(doc: dict) -> ModelFile:
    n, r, q, T = (int(_field(doc, k, "model")) for k in ("n", "r", "q", "horizon"))
    if min(n, r, q, T) < 1:
        raise FileFormatError("n, r, q and horizon must all be positive")
    S = doc.get("S")
    if S is not None and np.any(np.array(S, dtype=float) != 0):
        raise FileFormatError("correlated process and measurement noise (nonzero S) is not supported")
    model = StateSpaceModel(_per_step(doc, "F", T, n, n), _per_step(doc, "G", T, n, r),
                            _per_step(doc, "H", T, q, n), _per_step(doc, "Q", T, r, r),
                            _per_step(doc, "R", T, q, q), _matrix(_field(doc, "Pi0", "model"), n, n, "Pi0"))
    ys = doc.get("measurements")
    if ys is not None:
        ys = np.array(ys, dtype=float)
        if ys.ndim == 1 and q == 1:
            ys = ys[:, None]
        if ys.ndim != 2 or ys.shape[1] != q or not 1 <= ys.shape[0] <= T:
            raise DimensionError(f"measurements: expected (1..{T}, {q}) values, got shape {ys.shape}")
    return ModelFile(model, ys)


def _compact(stack: np.ndarray) -> list:
    if np.all(stack == stack[0]):
        return stack[0].tolist()
    return stack.tolist()


def model_to_dict(m: StateSpaceModel, measurements=None) -> dict:
    doc = {"n": m.n, "r": m.r, "q": m.q, "horizon": m.horizon,
           "F": _compact(m.F), "G": _compact(m.G), "H": _compact(m.H),
           "Q": _compact(m.Q), "R": _compact(m.R), "Pi0": m.Pi0.tolist()}
    if measurements is not None:
        doc["measurements"] = np.asarray(measurements, dtype=float).reshape(-1, m.q).tolist()
    return doc


def read_model(path) -> ModelFile:
    return model_from_dict(_load(path))


def write_model(path, m: StateSpaceModel, measurements=None) -> None:
    _dump(model_to_dict(m, measurements), path)


def models_equal(a: StateSpaceModel, b: StateSpaceModel) -> bool:
    return all(getattr(a, k).shape == getattr(b, k).shape and np.array_equal(getattr(a, k), getattr(b, k))
               for k in ("F", "G", "H", "Q", "R", "Pi0"))


# -------------------------------------------------------------- traces

def _num(v) -> str:
    return "" if v is None else "%.17g" % v


def write_trace(path, trace: Trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in trace.records:
            w.writerow([rec.iteration, "" if rec.active_node is None else rec.active_node,
                        _num(rec.feasibility), _num(rec.objective), _num(rec.err_vs_oracle)])


def read_trace(path) -> Trace:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRACE_HEADER:
        raise FileFormatError(f"{path}: trace header must be {','.join(TRACE_HEADER)}")
    records = []
    for row in rows[1:]:
        it, node, feas, obj, err = row
        records.append(TraceRecord(int(it), int(node) if node else None, float(feas), float(obj),
                                   float(err) if err else None))
    return Trace(records)
