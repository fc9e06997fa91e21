"""PDMM in message-passing form for decomposable quadratic programs.

Node ``i`` keeps a primal estimate ``x_i`` and, for every neighbour ``j``,
the last message ``m_{j->i}`` it received. One node update is

    x_i    = argmin f_i(x) + sum_j 1/2 ||A_{i|j} x - m_{j->i}||^2_{P_ij^{-1}}
    m_{i->j} = m_{j->i} + c_ij - 2 A_{i|j} x_i      for every j in N_i

and the synchronous variant performs it at all nodes from one snapshot
of the messages.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import numpy as np
import scipy.linalg

from .errors import DimensionError, ScheduleError, SingularSystemError
from .graph import Edge, Orientation, is_chain, is_tree
from .params import PMatrixSet, require_assumption2
from .problem import Problem, feasibility_residuals, objective_value

SINGULAR_RTOL = 1e-12


@dataclass
class SolverState:
    """Primal estimates per node and messages per directed pair ``(i, j)``."""

    x: list[np.ndarray]
    messages: dict[Edge, np.ndarray]
    iteration: int = 0

    def copy(self) -> "SolverState":
        return SolverState([v.copy() for v in self.x],
                           {k: v.copy() for k, v in self.messages.items()},
                           self.iteration)


def init_state(p: Problem, x0=None, m0: Mapping[Edge, np.ndarray] | None = None) -> SolverState:
    """Start from ``x0`` / ``m0`` (zeros by default).

    ``x0`` is a stacked vector; ``m0`` maps directed pairs to messages and
    may be partial, missing pairs default to zero.
    """
    xs = p.split(np.zeros(p.total_dim) if x0 is None else x0)
    msgs: dict[Edge, np.ndarray] = {}
    given = dict(m0 or {})
    for i, j in p.graph.directed_pairs():
        n = p.constraints[p.graph.edge_index(i, j)].dim
        m = np.asarray(given.pop((i, j), np.zeros(n)), dtype=float).reshape(-1)
        if m.shape != (n,):
            raise DimensionError(f"message {i}->{j} has shape {m.shape}, expected ({n},)")
        msgs[(i, j)] = m.copy()
    if given:
        raise DimensionError(f"messages given for non-edges: {sorted(given)}")
    return SolverState(xs, msgs, 0)


class LocalMinimizer(Protocol):
    """Hook for the per-node primal update.

    Only :class:`QuadraticLocalMinimizer` ships; a general convex ``f_i``
    would plug in here.
    """

    def x_update(self, i: int, incoming: Mapping[int, np.ndarray]) -> np.ndarray: ...


class QuadraticLocalMinimizer:
    """Closed-form x-update with per-node factorisations cached.

    The system matrix ``Sigma_i + sum_u A_{i|u}' P_iu^{-1} A_{i|u}`` does not
    change while ``P`` is fixed, so it is factorised once per node, lazily.
    With ``min_norm=True`` a singular system is solved in the minimum-norm
    least-squares sense instead of raising.
    """

    def __init__(self, p: Problem, P: PMatrixSet, min_norm: bool = False):
        self.p = p
        self.P = P
        self.min_norm = min_norm
        self._cache: dict[int, tuple] = {}

    def _system(self, i: int):
        if i not in self._cache:
            p = self.p
            M = p.objectives[i].Sigma.copy()
            weights = {}
            for u in p.graph.neighbors(i):
                A = p.A(i, u)
                W = scipy.linalg.solve(self.P[(i, u)], A, assume_a="pos")  # P_iu^{-1} A_{i|u}
                M += A.T @ W
                weights[u] = W
            M = 0.5 * (M + M.T)
            eig = np.linalg.eigvalsh(M) if M.size else np.ones(1)
            if eig[0] > SINGULAR_RTOL * max(1.0, abs(eig[-1])):
                self._cache[i] = ("chol", scipy.linalg.cho_factor(M), weights)
            elif self.min_norm:
                self._cache[i] = ("pinv", np.linalg.pinv(M, rcond=1e-12, hermitian=True), weights)
            else:
                raise SingularSystemError(
                    f"node {i}: local system matrix is singular (smallest eigenvalue {eig[0]:.3e})")
        return self._cache[i]

    def x_update(self, i: int, incoming: Mapping[int, np.ndarray]) -> np.ndarray:
        kind, fac, weights = self._system(i)
        rhs = self.p.objectives[i].a.copy()
        for u, W in weights.items():
            rhs += W.T @ incoming[u]
        if kind == "chol":
            return scipy.linalg.cho_solve(fac, rhs)
        return fac @ rhs


def _incoming(p: Problem, state: SolverState, i: int) -> dict[int, np.ndarray]:
    return {u: state.messages[(u, i)] for u in p.graph.neighbors(i)}


def local_x_update(p: Problem, P: PMatrixSet, state: SolverState, i: int, *,
                   min_norm: bool = False, minimizer: LocalMinimizer | None = None) -> np.ndarray:
    """Minimiser of the node-``i`` subproblem given the current incoming messages."""
    minimizer = minimizer or QuadraticLocalMinimizer(p, P, min_norm=min_norm)
    return minimizer.x_update(i, _incoming(p, state, i))


def message_update(p: Problem, state: SolverState, i: int, j: int, x_i_new) -> np.ndarray:
    """``m_{i->j} = m_{j->i} + c_ij - 2 A_{i|j} x_i``."""
    if not p.graph.has_edge(i, j):
        raise DimensionError(f"({i}, {j}) is not an edge")
    x_i_new = np.asarray(x_i_new, dtype=float)
    if x_i_new.shape != (p.dims[i],):
        raise DimensionError(f"x_{i} has shape {x_i_new.shape}, expected ({p.dims[i]},)")
    return state.messages[(j, i)] + p.c(i, j) - 2.0 * p.A(i, j) @ x_i_new


def sync_iteration(p: Problem, P: PMatrixSet, state: SolverState,
                   minimizer: LocalMinimizer | None = None) -> SolverState:
    minimizer = minimizer or QuadraticLocalMinimizer(p, P)
    xs = [minimizer.x_update(i, _incoming(p, state, i)) for i in range(p.graph.node_count)]
    # every new message uses the reverse message of the previous iteration
    msgs = {(i, j): message_update(p, state, i, j, xs[i]) for (i, j) in state.messages}
    return SolverState(xs, msgs, state.iteration + 1)


def async_step(p: Problem, P: PMatrixSet, state: SolverState, i: int,
               minimizer: LocalMinimizer | None = None) -> SolverState:
    """Update node ``i`` only: its primal estimate and its outgoing messages."""
    if not 0 <= i < p.graph.node_count:
        raise DimensionError(f"node {i} is out of range")
    minimizer = minimizer or QuadraticLocalMinimizer(p, P)
    x_i = minimizer.x_update(i, _incoming(p, state, i))
    xs = list(state.x)
    xs[i] = x_i
    msgs = dict(state.messages)
    for j in p.graph.neighbors(i):
        msgs[(i, j)] = message_update(p, state, i, j, x_i)
    return SolverState(xs, msgs, state.iteration + 1)


def forward_message_direct(p: Problem, P: PMatrixSet, incoming: Mapping[int, np.ndarray],
                           i: int, j: int) -> np.ndarray:
    """Message ``m_{i->j}`` with the reverse message ``m_{j->i}`` eliminated.

    Valid when ``P`` comes from the tree recursion with ``[i, j]`` pointing
    towards the root; ``incoming`` holds ``m_{u->i}`` for ``u`` in
    ``N_i \\ {j}``.
    """
    M = p.objectives[i].Sigma.copy()
    rhs = p.objectives[i].a.copy()
    for u in p.graph.neighbors(i):
        A = p.A(i, u)
        M += A.T @ np.linalg.solve(P[(i, u)], A)
        if u != j:
            rhs += A.T @ np.linalg.solve(P[(i, u)], incoming[u])
    M = 0.5 * (M + M.T)
    eig = np.linalg.eigvalsh(M)
    if eig[0] <= SINGULAR_RTOL * max(1.0, abs(eig[-1])):
        raise SingularSystemError(f"node {i}: local system matrix is singular")
    return p.c(i, j) - 2.0 * p.A(i, j) @ np.linalg.solve(M, rhs)


def lambda_from_message(P_ij, m_j_to_i, c_ij, A_j_on_i, x_j) -> np.ndarray:
    """Dual estimate ``lambda_{j|i} = P_ij^{-1} (m_{j->i} - c_ij + A_{j|i} x_j)``."""
    P_ij = np.atleast_2d(np.asarray(P_ij, dtype=float))
    r = np.asarray(m_j_to_i, float) - np.asarray(c_ij, float) + np.atleast_2d(A_j_on_i) @ np.asarray(x_j, float)
    try:
        return np.linalg.solve(P_ij, r)
    except np.linalg.LinAlgError:
        raise SingularSystemError("weighting matrix is singular") from None


def duals_from_state(p: Problem, P: PMatrixSet, state: SolverState) -> list[np.ndarray]:
    """One dual per edge ``(i, j)``, ``i < j``, read off the message ``m_{j->i}``."""
    return [lambda_from_message(P[(i, j)], state.messages[(j, i)], p.c(i, j), p.A(j, i), state.x[j])
            for i, j in p.graph.edges]


def fixed_point_messages(p: Problem, P: PMatrixSet, x, delta) -> dict[Edge, np.ndarray]:
    """Messages ``m_{i->j} = P_ij delta_ij + c_ij - A_{i|j} x_i`` of a saddle point."""
    xs = p.split(x)
    msgs = {}
    for (i, j), d in zip(p.graph.edges, delta):
        for a, b in ((i, j), (j, i)):
            msgs[(a, b)] = P[(i, j)] @ d + p.c(a, b) - p.A(a, b) @ xs[a]
    return msgs


# ----------------------------------------------------------------- schedules

@dataclass(frozen=True)
class Schedule:
    """How nodes are activated.

    ``kind`` is one of ``sync``, ``cyclic``, ``random``, ``chain-fb`` and
    ``tree-fb``. The two forward/backward kinds carry the orientation they
    were designed for.
    """

    kind: str
    seed: int | None = None
    orientation: Orientation | None = None

    KINDS = ("sync", "cyclic", "random", "chain-fb", "tree-fb")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ScheduleError(f"unknown schedule {self.kind!r}")
        if self.kind in ("chain-fb", "tree-fb") and self.orientation is None:
            raise ScheduleError(f"{self.kind} schedule needs an orientation")

    @classmethod
    def synchronous(cls):
        return cls("sync")

    @classmethod
    def cyclic(cls):
        return cls("cyclic")

    @classmethod
    def random(cls, seed: int):
        return cls("random", seed=int(seed))

    @classmethod
    def chain_forward_backward(cls, orientation: Orientation):
        return cls("chain-fb", orientation=orientation)

    @classmethod
    def tree_forward_backward(cls, orientation: Orientation):
        return cls("tree-fb", orientation=orientation)

    @property
    def is_finite(self) -> bool:
        return self.kind in ("chain-fb", "tree-fb")


def check_schedule(p: Problem, schedule: Schedule) -> None:
    g = p.graph
    if schedule.is_finite:
        o = schedule.orientation
        if len(o.dist) != g.node_count:
            raise ScheduleError("orientation does not match the problem graph")
        if schedule.kind == "chain-fb":
            if not is_chain(g):
                raise ScheduleError("chain-fb schedule requires a chain graph")
            if g.degree(o.root) > 1:
                raise ScheduleError(f"chain-fb schedule requires the root ({o.root}) to be an end of the chain")
        elif not is_tree(g):
            raise ScheduleError("tree-fb schedule requires a tree")


def finite_schedule_nodes(schedule: Schedule) -> tuple[list[int], list[int]]:
    """Node activations ``(forward, backward)`` of a forward/backward schedule.

    Forward visits the tail of every directed edge leaves-first, so each
    node fires only after all of its children; backward goes root-first.
    """
    o = schedule.orientation
    return [i for i, _ in o.directed_edges], o.backward_nodes()


# ------------------------------------------------------------------ driver

class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max-iterations"
    FINITE_SCHEDULE_COMPLETE = "finite-schedule-complete"


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    active_node: int | None
    feasibility: float
    objective: float
    err_vs_oracle: float | None


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]


@dataclass
class RunResult:
    x: np.ndarray
    trace: Trace
    status: Status
    state: SolverState

    @property
    def iterations(self) -> int:
        return len(self.trace)


def feasibility_norm(p: Problem, xs) -> float:
    return max((float(np.linalg.norm(r)) for r in feasibility_residuals(p, xs)), default=0.0)


def run(p: Problem, P: PMatrixSet, schedule: Schedule, max_iters: int = 1000, tol: float = 1e-8,
        oracle_x=None, *, x0=None, m0=None,
        callback: Callable[[SolverState, int | None], None] | None = None,
        minimizer: LocalMinimizer | None = None) -> RunResult:
    """Iterate until feasibility and the change in ``x`` are both within ``tol``.

    Forward/backward schedules ignore ``max_iters`` and ``tol``: they run
    their finite activation sequence exactly once. For the cyclic and
    random schedules the change in ``x`` is measured over a sweep of
    ``node_count`` activations. ``callback(state, active_node)`` is called
    after every iteration.
    """
    check_schedule(p, schedule)
    require_assumption2(P)
    minimizer = minimizer or QuadraticLocalMinimizer(p, P)
    state = init_state(p, x0, m0)
    trace = Trace()
    x_star = None if oracle_x is None else np.asarray(oracle_x, dtype=float)

    def record(active):
        x = p.stack(state.x)
        err = None if x_star is None else float(np.linalg.norm(x - x_star))
        trace.records.append(TraceRecord(state.iteration, active, feasibility_norm(p, state.x),
                                         objective_value(p, x), err))
        if callback is not None:
            callback(state, active)

    m = p.graph.node_count
    if not p.graph.edges:
        # nothing couples the nodes: one unconstrained solve per node
        state = SolverState([minimizer.x_update(i, {}) for i in range(m)], {}, 1)
        record(None)
        return RunResult(p.stack(state.x), trace, Status.CONVERGED, state)

    if schedule.is_finite:
        forward, backward = finite_schedule_nodes(schedule)
        for i in forward + backward:
            state = async_step(p, P, state, i, minimizer)
            record(i)
        return RunResult(p.stack(state.x), trace, Status.FINITE_SCHEDULE_COMPLETE, state)

    status = Status.MAX_ITERATIONS
    if schedule.kind == "sync":
        for _ in range(max_iters):
            prev = p.stack(state.x)
            state = sync_iteration(p, P, state, minimizer)
            record(None)
            change = float(np.linalg.norm(p.stack(state.x) - prev))
            if trace.records[-1].feasibility <= tol and change <= tol:
                status = Status.CONVERGED
                break
    else:
        rng = np.random.default_rng(schedule.seed) if schedule.kind == "random" else None
        sweep_start = p.stack(state.x)
        for k in range(max_iters):
            i = int(rng.integers(m)) if rng is not None else k % m
            state = async_step(p, P, state, i, minimizer)
            record(i)
            if (k + 1) % m == 0:
                x = p.stack(state.x)
                change = float(np.linalg.norm(x - sweep_start))
                sweep_start = x
                if trace.records[-1].feasibility <= tol and change <= tol:
                    status = Status.CONVERGED
                    break
    return RunResult(p.stack(state.x), trace, status, state)
