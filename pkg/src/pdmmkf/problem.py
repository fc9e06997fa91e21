"""Decomposable quadratic programs over an undirected graph.

Each node ``i`` owns ``f_i(x_i) = 1/2 x_i' Sigma_i x_i - a_i' x_i`` and
each edge ``(i, j)`` (stored with ``i < j``) couples its endpoints through
``A_{i|j} x_i + A_{j|i} x_j = c_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionError, InfeasibleError, NoSaddlePointError, ValidationError
from .graph import Graph

SYM_RTOL = 1e-12
PSD_RTOL = 1e-10


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class NodeObjective:
    Sigma: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Sigma", _as_matrix(self.Sigma, "Sigma"))
        object.__setattr__(self, "a", _as_vector(self.a, "a"))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Sigma @ x - self.a @ x)


@dataclass(frozen=True, eq=False)
class EdgeConstraint:
    """``A_i_on_j x_i + A_j_on_i x_j = c`` for the edge ``(i, j)``, ``i < j``."""

    A_i_on_j: np.ndarray
    A_j_on_i: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A_i_on_j", _as_matrix(self.A_i_on_j, "A_i_on_j"))
        object.__setattr__(self, "A_j_on_i", _as_matrix(self.A_j_on_i, "A_j_on_i"))
        object.__setattr__(self, "c", _as_vector(self.c, "c"))

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def flipped(self) -> "EdgeConstraint":
        return EdgeConstraint(self.A_j_on_i, self.A_i_on_j, self.c)


@dataclass(frozen=True, eq=False)
class Problem:
    """Validated problem instance; constraints are aligned with ``graph.edges``."""

    graph: Graph
    objectives: tuple[NodeObjective, ...]
    constraints: tuple[EdgeConstraint, ...]

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        validate(self)
        offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        object.__setattr__(self, "_offsets", offsets)

    @property
    def dims(self) -> list[int]:
        return [o.dim for o in self.objectives]

    @property
    def edge_dims(self) -> list[int]:
        return [c.dim for c in self.constraints]

    @property
    def total_dim(self) -> int:
        return int(sum(self.dims))

    def A(self, i: int, j: int) -> np.ndarray:
        """``A_{i|j}``: node ``i``'s matrix in the constraint of edge ``(i, j)``."""
        con = self.constraints[self.graph.edge_index(i, j)]
        return con.A_i_on_j if i < j else con.A_j_on_i

    def c(self, i: int, j: int) -> np.ndarray:
        return self.constraints[self.graph.edge_index(i, j)].c

    def split(self, x) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.total_dim,):
            raise DimensionError(f"stacked vector has shape {x.shape}, expected ({self.total_dim},)")
        o = self._offsets
        return [x[o[i]:o[i + 1]].copy() for i in range(self.graph.node_count)]

    def stack(self, parts: Sequence[np.ndarray]) -> np.ndarray:
        if len(parts) != self.graph.node_count:
            raise DimensionError(f"expected {self.graph.node_count} node vectors, got {len(parts)}")
        for i, (p, n) in enumerate(zip(parts, self.dims)):
            if np.shape(p) != (n,):
                raise DimensionError(f"node {i}: vector has shape {np.shape(p)}, expected ({n},)")
        return np.concatenate([np.asarray(p, dtype=float) for p in parts]) if parts else np.zeros(0)

    def data_scale(self) -> float:
        """``1 + ||a|| + ||c||`` used to scale absolute tolerances."""
        a = np.concatenate([o.a for o in self.objectives])
        c = np.concatenate([k.c for k in self.constraints]) if self.constraints else np.zeros(0)
        return 1.0 + float(np.linalg.norm(a)) + float(np.linalg.norm(c))


def validate(p: Problem) -> None:
    g = p.graph
    if len(p.objectives) != g.node_count:
        raise DimensionError(f"{len(p.objectives)} objectives for {g.node_count} nodes")
    if len(p.constraints) != len(g.edges):
        raise DimensionError(f"{len(p.constraints)} constraints for {len(g.edges)} edges")
    for i, obj in enumerate(p.objectives):
        S, n = obj.Sigma, obj.dim
        if S.shape != (n, n):
            raise DimensionError(f"node {i}: Sigma has shape {S.shape}, expected ({n}, {n})")
        scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
        if np.max(np.abs(S - S.T), initial=0.0) > SYM_RTOL * scale:
            raise ValidationError(f"node {i}: Sigma is not symmetric")
        if n:
            eig = np.linalg.eigvalsh(0.5 * (S + S.T))
            if eig[0] < -PSD_RTOL * max(abs(eig[-1]), abs(eig[0])):
                raise ValidationError(
                    f"node {i}: Sigma is not positive semi-definite (min eigenvalue {eig[0]:.3e})")
    for (i, j), con in zip(g.edges, p.constraints):
        m = con.dim
        ni, nj = p.objectives[i].dim, p.objectives[j].dim
        if con.A_i_on_j.shape != (m, ni):
            raise DimensionError(
                f"edge ({i}, {j}): A_i_on_j has shape {con.A_i_on_j.shape}, expected ({m}, {ni})")
        if con.A_j_on_i.shape != (m, nj):
            raise DimensionError(
                f"edge ({i}, {j}): A_j_on_i has shape {con.A_j_on_i.shape}, expected ({m}, {nj})")


def build_problem(graph: Graph, objectives, constraints) -> Problem:
    """Assemble a problem from ``(Sigma, a)`` and ``(A_i_on_j, A_j_on_i, c)`` tuples.

    ``constraints`` may also be a mapping keyed by ``(i, j)`` pairs in either
    orientation; the matrices are swapped as needed so that the stored
    constraint always refers to ``(min, max)``.
    """
    objs = [o if isinstance(o, NodeObjective) else NodeObjective(*o) for o in objectives]
    if isinstance(constraints, dict):
        ordered: list = [None] * len(graph.edges)
        for (i, j), con in constraints.items():
            con = con if isinstance(con, EdgeConstraint) else EdgeConstraint(*con)
            ordered[graph.edge_index(i, j)] = con if i < j else con.flipped()
        if any(c is None for c in ordered):
            missing = [e for e, c in zip(graph.edges, ordered) if c is None]
            raise DimensionError(f"missing constraints for edges {missing}")
        cons = ordered
    else:
        cons = [c if isinstance(c, EdgeConstraint) else EdgeConstraint(*c) for c in constraints]
    return Problem(graph, tuple(objs), tuple(cons))


def objective_value(p: Problem, x) -> float:
    return float(sum(o.value(xi) for o, xi in zip(p.objectives, p.split(x))))


@dataclass(frozen=True)
class KktResidual:
    stationarity: list[np.ndarray]
    feasibility: list[np.ndarray]
    norm: float


def feasibility_residuals(p: Problem, xs: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [con.A_i_on_j @ xs[i] + con.A_j_on_i @ xs[j] - con.c
            for (i, j), con in zip(p.graph.edges, p.constraints)]


def kkt_residual(p: Problem, x, delta) -> KktResidual:
    """Residuals of ``Sigma_i x_i - a_i - sum_j A_{i|j}' delta_ij = 0`` and edge feasibility.

    ``delta`` holds one dual vector per edge, aligned with ``graph.edges``.
    """
    xs = p.split(x)
    delta = [np.asarray(d, dtype=float).reshape(-1) for d in delta]
    if len(delta) != len(p.constraints):
        raise DimensionError(f"{len(delta)} dual vectors for {len(p.constraints)} edges")
    for (i, j), d, con in zip(p.graph.edges, delta, p.constraints):
        if d.shape != (con.dim,):
            raise DimensionError(f"edge ({i}, {j}): dual has shape {d.shape}, expected ({con.dim},)")
    stat = [o.Sigma @ xi - o.a for o, xi in zip(p.objectives, xs)]
    for (i, j), d, con in zip(p.graph.edges, delta, p.constraints):
        stat[i] -= con.A_i_on_j.T @ d
        stat[j] -= con.A_j_on_i.T @ d
    feas = feasibility_residuals(p, xs)
    norm = max((float(np.linalg.norm(r)) for r in stat + feas), default=0.0)
    return KktResidual(stat, feas, norm)


def kkt_system(p: Problem) -> tuple[np.ndarray, np.ndarray]:
    """Dense symmetric saddle-point matrix and right-hand side.

    Unknowns are ``[x; -delta]`` so that the matrix is symmetric:
    ``[[Sigma, A'], [A, 0]] [x; -delta] = [a; c]``.
    """
    nx = p.total_dim
    nd = int(sum(p.edge_dims))
    K = np.zeros((nx + nd, nx + nd))
    rhs = np.zeros(nx + nd)
    off = p._offsets
    for i, o in enumerate(p.objectives):
        K[off[i]:off[i + 1], off[i]:off[i + 1]] = o.Sigma
        rhs[off[i]:off[i + 1]] = o.a
    row = nx
    for (i, j), con in zip(p.graph.edges, p.constraints):
        rows = slice(row, row + con.dim)
        K[rows, off[i]:off[i + 1]] = con.A_i_on_j
        K[rows, off[j]:off[j + 1]] = con.A_j_on_i
        rhs[rows] = con.c
        row += con.dim
    K[:nx, nx:] = K[nx:, :nx].T
    return K, rhs


def oracle_solve(p: Problem) -> tuple[np.ndarray, list[np.ndarray]]:
    """Dense minimum-norm solve of the KKT equations.

    Returns ``(x_star, delta_star)``. Raises :class:`InfeasibleError` when
    the constraints are inconsistent and :class:`NoSaddlePointError` when
    the objective is unbounded on the feasible set.
    """
    K, rhs = kkt_system(p)
    nx = p.total_dim
    sol = scipy.linalg.lstsq(K, rhs, lapack_driver="gelsd")[0]
    # one step of iterative refinement tightens the residual on mildly
    # ill-conditioned systems
    sol = sol + scipy.linalg.lstsq(K, rhs - K @ sol, lapack_driver="gelsd")[0]
    x = sol[:nx]
    delta, row = [], nx
    for con in p.constraints:
        delta.append(-sol[row:row + con.dim])
        row += con.dim
    res = kkt_residual(p, x, delta)
    tol = 1e-7 * p.data_scale() * max(1.0, float(np.linalg.norm(K, 2)))
    feas = max((float(np.linalg.norm(r)) for r in res.feasibility), default=0.0)
    if feas > tol:
        raise InfeasibleError(f"edge constraints are inconsistent (residual {feas:.3e})")
    if res.norm > tol:
        raise NoSaddlePointError(f"objective is unbounded on the feasible set (residual {res.norm:.3e})")
    return x, delta
