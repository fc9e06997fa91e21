"""Edge weighting matrices for PDMM.

Two constructions ship: ``rho * I`` on every edge, and the tree recursion
that propagates curvature from the leaves towards a root. The latter
cancels the reverse message in every forward update, which is what makes
the iteration terminate in finitely many steps on trees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import AssumptionError, DimensionError, SingularSystemError, ValidationError
from .graph import Edge, Orientation
from .problem import Problem

PD_RTOL = 1e-12
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class PMatrixSet:
    """One symmetric matrix per undirected edge, aligned with ``edges``.

    ``kind`` is ``"tree-optimal"``, ``"uniform"`` or ``"custom"``; ``root``
    and ``rho`` record how the set was produced.
    """

    edges: tuple[Edge, ...]
    matrices: tuple[np.ndarray, ...]
    kind: str = "custom"
    root: int | None = None
    rho: float | None = None

    def __post_init__(self):
        mats = tuple(np.atleast_2d(np.array(m, dtype=float)) for m in self.matrices)
        if len(mats) != len(self.edges):
            raise DimensionError(f"{len(mats)} matrices for {len(self.edges)} edges")
        for (i, j), m in zip(self.edges, mats):
            if m.shape[0] != m.shape[1]:
                raise DimensionError(f"edge ({i}, {j}): weighting matrix is not square {m.shape}")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "_index", {e: k for k, e in enumerate(self.edges)})

    def __getitem__(self, edge: Edge) -> np.ndarray:
        i, j = edge
        return self.matrices[self._index[(i, j) if i < j else (j, i)]]

    def __len__(self) -> int:
        return len(self.matrices)


def custom(p: Problem, matrices: Sequence) -> PMatrixSet:
    P = PMatrixSet(p.graph.edges, tuple(matrices), "custom")
    for (i, j), m, n in zip(P.edges, P.matrices, p.edge_dims):
        if m.shape != (n, n):
            raise DimensionError(f"edge ({i}, {j}): weighting matrix has shape {m.shape}, expected ({n}, {n})")
    return P


def build_uniform(p: Problem, rho: float) -> PMatrixSet:
    if not rho > 0 or not np.isfinite(rho):
        raise ValidationError(f"rho must be positive and finite, got {rho!r}")
    mats = tuple(rho * np.eye(n) for n in p.edge_dims)
    return PMatrixSet(p.graph.edges, mats, "uniform", rho=float(rho))


def _checked_cholesky(M: np.ndarray, what: str):
    eig = np.linalg.eigvalsh(M)
    if eig.size and eig[0] <= SINGULAR_RTOL * max(1.0, abs(eig[-1])):
        raise SingularSystemError(f"{what} is singular (smallest eigenvalue {eig[0]:.3e})")
    return scipy.linalg.cho_factor(M)


def build_tree_optimal(p: Problem, o: Orientation) -> PMatrixSet:
    """Leaf-to-root recursion ``P_ij = A_{i|j} C_{i/j}^{-1} A_{i|j}'``.

    ``C_{i/j}`` is ``Sigma_i`` plus the curvature ``A_{i|u}' P_ui^{-1} A_{i|u}``
    contributed by every already-processed edge ``[u, i]``. At a leaf the
    sum is empty and ``Sigma_u`` itself has to be nonsingular.
    """
    if len(o.dist) != p.graph.node_count:
        raise DimensionError("orientation does not match the problem graph")
    mats: dict[Edge, np.ndarray] = {}
    for i, j in o.directed_edges:
        C = p.objectives[i].Sigma.copy()
        for u in p.graph.neighbors(i):
            if u == j:
                continue
            A_iu = p.A(i, u)
            C += A_iu.T @ scipy.linalg.solve(mats[_key(i, u)], A_iu, assume_a="pos")
        C = 0.5 * (C + C.T)
        leaf = p.graph.degree(i) == 1
        what = (f"Sigma at leaf node {i} (edge [{i}, {j}])" if leaf
                else f"inner matrix at node {i} for edge [{i}, {j}]")
        factor = _checked_cholesky(C, what)
        A_ij = p.A(i, j)
        P = A_ij @ scipy.linalg.cho_solve(factor, A_ij.T)
        P = 0.5 * (P + P.T)
        lam = _min_eig(P)
        if not lam > PD_RTOL * max(1.0, _norm2(P)):
            raise AssumptionError(
                f"edge [{i}, {j}]: weighting matrix is not positive definite "
                f"(smallest eigenvalue {lam:.3e})")
        mats[_key(i, j)] = P
    ordered = tuple(mats[e] for e in p.graph.edges)
    return PMatrixSet(p.graph.edges, ordered, "tree-optimal", root=o.root)


def _key(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


def _min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) if M.size else np.inf


def _norm2(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


@dataclass(frozen=True)
class EdgeCheck:
    edge: Edge
    min_eigenvalue: float
    symmetric: bool
    passed: bool


@dataclass(frozen=True)
class Assumption2Report:
    edges: tuple[EdgeCheck, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.edges)

    def failures(self) -> list[EdgeCheck]:
        return [e for e in self.edges if not e.passed]


def check_assumption2(P: PMatrixSet) -> Assumption2Report:
    """Symmetric positive definiteness of every weighting matrix."""
    checks = []
    for e, M in zip(P.edges, P.matrices):
        scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
        sym = bool(np.max(np.abs(M - M.T), initial=0.0) <= 1e-12 * scale)
        lam = _min_eig(M)
        ok = sym and lam > PD_RTOL * max(1.0, _norm2(M))
        checks.append(EdgeCheck(e, lam, sym, bool(ok)))
    return Assumption2Report(tuple(checks))


def require_assumption2(P: PMatrixSet) -> None:
    bad = check_assumption2(P).failures()
    if bad:
        e = bad[0]
        raise AssumptionError(
            f"edge {e.edge}: weighting matrix is not symmetric positive definite "
            f"(smallest eigenvalue {e.min_eigenvalue:.3e})")


def woodbury_inverse(A_inv, U, C, V) -> np.ndarray:
    """``(A + U C V)^{-1}`` from ``A^{-1}`` via the Woodbury identity."""
    A_inv, U, C, V = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A_inv, U, C, V))
    AU = A_inv @ U
    VA = V @ A_inv
    try:
        inner = np.linalg.inv(C) + V @ AU
        core = np.linalg.solve(inner, VA)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"Woodbury inner matrix is singular: {exc}") from None
    if not np.all(np.isfinite(core)):
        raise SingularSystemError("Woodbury inner matrix is singular")
    return A_inv - AU @ core
