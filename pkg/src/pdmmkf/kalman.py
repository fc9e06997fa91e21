"""Linear Gaussian state-space models, the Kalman filter, and PDMM on the
equivalent maximum-likelihood chain.

The model is

    z_{l+1} = F_l z_l + G_l u_l,   y_l = H_l z_l + v_l,

with ``u_l ~ N(0, Q_l)``, ``v_l ~ N(0, R_l)`` and ``z_0 ~ N(0, Pi0)``. The
ML chain for measurements ``y_0 .. y_l`` has ``l + 2`` nodes; node ``i``
carries ``x_i = [u_i; z_i]`` and the edge ``(i, i+1)`` enforces the state
equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AssumptionError, DimensionError, SingularSystemError, ValidationError
from .graph import build_graph
from .params import PMatrixSet
from .pdmm import QuadraticLocalMinimizer, async_step, forward_message_direct, init_state
from .problem import Problem, build_problem


def _stack(value, horizon: int, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim < ndim:
        arr = arr.reshape((1,) * (ndim - arr.ndim) + arr.shape)
    if arr.ndim == ndim:
        arr = np.repeat(arr[None], horizon, axis=0)
    if arr.ndim != ndim + 1 or arr.shape[0] != horizon:
        raise DimensionError(f"{name} must be one matrix or one per step ({horizon}), got shape {arr.shape}")
    return arr


def _check_pd(M: np.ndarray, name: str) -> None:
    """``M`` is a stack of matrices (or one matrix); each must be SPD."""
    M = np.asarray(M)
    stack = M if M.ndim == 3 else M[None]
    asym = np.max(np.abs(stack - np.swapaxes(stack, 1, 2)), axis=(1, 2))
    scale = np.maximum(1.0, np.max(np.abs(stack), axis=(1, 2)))
    if np.any(asym > 1e-10 * scale):
        raise ValidationError(f"{name} is not symmetric (step {int(np.argmax(asym > 1e-10 * scale))})")
    eig = np.linalg.eigvalsh(0.5 * (stack + np.swapaxes(stack, 1, 2)))
    bad = eig[:, 0] <= 1e-12 * np.maximum(1.0, np.abs(eig[:, -1]))
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ValidationError(f"{name} is not positive definite (step {k}, smallest eigenvalue {eig[k, 0]:.3e})")


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Time-varying model stored as per-step arrays of length ``horizon``."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Pi0: np.ndarray

    def __post_init__(self):
        F = np.array(self.F, dtype=float)
        if F.ndim != 3:
            raise DimensionError(f"F must have shape (horizon, n, n), got {F.shape}")
        horizon = F.shape[0]
        for name in ("G", "H", "Q", "R"):
            object.__setattr__(self, name, _stack(getattr(self, name), horizon, name))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Pi0", np.atleast_2d(np.array(self.Pi0, dtype=float)))
        self._validate()

    @classmethod
    def time_invariant(cls, F, G, H, Q, R, Pi0, horizon: int) -> "StateSpaceModel":
        F = np.atleast_2d(np.array(F, dtype=float))
        return cls(np.repeat(F[None], horizon, axis=0), G, H, Q, R, Pi0)

    @property
    def horizon(self) -> int:
        return self.F.shape[0]

    @property
    def n(self) -> int:
        return self.F.shape[1]

    @property
    def r(self) -> int:
        return self.G.shape[2]

    @property
    def q(self) -> int:
        return self.H.shape[1]

    def _validate(self) -> None:
        T, n = self.horizon, self.F.shape[1]
        if T < 1:
            raise ValidationError("horizon must be at least 1")
        r, q = self.G.shape[2], self.H.shape[1]
        expected = {"F": (T, n, n), "G": (T, n, r), "H": (T, q, n), "Q": (T, r, r), "R": (T, q, q)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.Pi0.shape != (n, n):
            raise DimensionError(f"Pi0 has shape {self.Pi0.shape}, expected ({n}, {n})")
        _check_pd(self.Q, "Q")
        _check_pd(self.R, "R")
        _check_pd(self.Pi0, "Pi0")
        rank = np.linalg.matrix_rank(np.concatenate([self.F, self.G], axis=2))
        if np.any(rank < n):
            k = int(np.argmax(rank < n))
            raise ValidationError(f"[F G] at step {k} does not have full row rank ({rank[k]} < {n})")


@dataclass(frozen=True)
class KalmanState:
    """``z_pred`` is the prediction of ``z_step`` from ``y_0 .. y_{step-1}``."""

    z_pred: np.ndarray
    D: np.ndarray
    K: np.ndarray
    step: int


def kalman_init(m: StateSpaceModel) -> KalmanState:
    return KalmanState(np.zeros(m.n), m.Pi0.copy(), np.zeros((m.n, m.q)), 0)


def kalman_step(m: StateSpaceModel, s: KalmanState, y) -> KalmanState:
    """One-step predictor: gain, next prediction and its error covariance."""
    l = s.step
    if l >= m.horizon:
        raise DimensionError(f"step {l} is beyond the model horizon {m.horizon}")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (m.q,):
        raise DimensionError(f"measurement {l} has shape {y.shape}, expected ({m.q},)")
    F, G, H, Q, R = m.F[l], m.G[l], m.H[l], m.Q[l], m.R[l]
    D = s.D
    S = H @ D @ H.T + R
    try:
        K = scipy.linalg.solve(S, H @ D @ F.T, assume_a="pos").T
    except (np.linalg.LinAlgError, ValueError):
        raise SingularSystemError(f"innovation covariance at step {l} is singular") from None
    z = (F - K @ H) @ s.z_pred + K @ y
    D_next = F @ D @ F.T + G @ Q @ G.T - K @ S @ K.T
    return KalmanState(z, 0.5 * (D_next + D_next.T), K, l + 1)


def kalman_filter(m: StateSpaceModel, ys) -> list[KalmanState]:
    """States after each measurement; entry ``l`` holds ``z_{l+1|l}`` and ``D_{l+1}``."""
    s = kalman_init(m)
    out = []
    for y in ys:
        s = kalman_step(m, s, y)
        out.append(s)
    return out


# ------------------------------------------------------------ ML chain

@dataclass(frozen=True, eq=False)
class MlChainProblem:
    """The ML estimation problem for ``y_0 .. y_l`` as a chain-graph QP."""

    problem: Problem
    step: int
    r: int
    n: int

    @property
    def root(self) -> int:
        return self.step + 1

    def split_uz(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Stacked solution to arrays ``u`` (l+2, r) and ``z`` (l+2, n)."""
        blocks = np.asarray(x, dtype=float).reshape(self.step + 2, self.r + self.n)
        return blocks[:, :self.r].copy(), blocks[:, self.r:].copy()


def _measurements(m: StateSpaceModel, ys) -> np.ndarray:
    ys = np.array(ys, dtype=float)
    if ys.ndim == 1 and m.q == 1:
        ys = ys[:, None]
    if ys.ndim != 2 or ys.shape[1] != m.q:
        raise DimensionError(f"measurements must have shape (steps, {m.q}), got {ys.shape}")
    if not 1 <= ys.shape[0] <= m.horizon:
        raise DimensionError(f"need between 1 and {m.horizon} measurements, got {ys.shape[0]}")
    return ys


def _sym_inv(M: np.ndarray) -> np.ndarray:
    inv = np.linalg.inv(M)
    return 0.5 * (inv + inv.T)


def ml_chain_problem(m: StateSpaceModel, ys) -> MlChainProblem:
    ys = _measurements(m, ys)
    l = ys.shape[0] - 1
    n, r = m.n, m.r
    objectives = []
    for i in range(l + 1):
        H, Rinv = m.H[i], _sym_inv(m.R[i])
        Sigma = np.zeros((r + n, r + n))
        Sigma[:r, :r] = _sym_inv(m.Q[i])
        Sigma[r:, r:] = H.T @ Rinv @ H
        if i == 0:
            Sigma[r:, r:] += _sym_inv(m.Pi0)
        a = np.concatenate([np.zeros(r), H.T @ Rinv @ ys[i]])
        objectives.append((Sigma, a))
    objectives.append((np.zeros((r + n, r + n)), np.zeros(r + n)))
    select_z = np.hstack([np.zeros((n, r)), np.eye(n)])
    constraints = [(-np.hstack([m.G[i], m.F[i]]), select_z, np.zeros(n)) for i in range(l + 1)]
    g = build_graph(l + 2, [(i, i + 1) for i in range(l + 1)])
    return MlChainProblem(build_problem(g, objectives, constraints), l, r, n)


def build_P_statespace(m: StateSpaceModel, l: int) -> PMatrixSet:
    """``P_{i,i+1} = [G_i F_i] J_i^{-1} [G_i F_i]'`` for ``i = 0 .. l``.

    ``J_i = diag(Q_i^{-1}, H_i' R_i^{-1} H_i + P_{i-1,i}^{-1})`` with
    ``P_{-1,0} = Pi0``.
    """
    if not 0 <= l < m.horizon:
        raise DimensionError(f"step {l} outside [0, {m.horizon})")
    n, r = m.n, m.r
    P_prev = m.Pi0
    mats = []
    for i in range(l + 1):
        J = np.zeros((r + n, r + n))
        J[:r, :r] = _sym_inv(m.Q[i])
        J[r:, r:] = m.H[i].T @ _sym_inv(m.R[i]) @ m.H[i] + _sym_inv(P_prev)
        GF = np.hstack([m.G[i], m.F[i]])
        P = GF @ scipy.linalg.solve(J, GF.T, assume_a="pos")
        P = 0.5 * (P + P.T)
        lam = np.linalg.eigvalsh(P)[0]
        if lam <= 1e-12 * max(1.0, np.linalg.norm(P, 2)):
            raise AssumptionError(f"edge ({i}, {i + 1}): weighting matrix is not positive definite "
                                  f"(smallest eigenvalue {lam:.3e})")
        mats.append(P)
        P_prev = P
    edges = tuple((i, i + 1) for i in range(l + 1))
    return PMatrixSet(edges, tuple(mats), "tree-optimal", root=l + 1)


def pdmm_filter(m: StateSpaceModel, ys) -> list[tuple[np.ndarray, np.ndarray]]:
    """Forward PDMM messages on the ML chain: ``[(m_{i->i+1}, P_{i,i+1}), ...]``.

    Each message is computed with the reverse message eliminated, from the
    previous one only, so extending ``ys`` never alters earlier entries.
    """
    chain = ml_chain_problem(m, ys)
    P = build_P_statespace(m, chain.step)
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(chain.step + 1):
        incoming = {i - 1: out[-1][0]} if i > 0 else {}
        msg = forward_message_direct(chain.problem, P, incoming, i, i + 1)
        out.append((msg, P[(i, i + 1)]))
    return out


@dataclass(frozen=True)
class SmootherResult:
    """Per-node estimates ``u`` (L+2, r) and ``z`` (L+2, n) for ``L = len(ys) - 1``."""

    u: np.ndarray
    z: np.ndarray
    lag: int | None


def _backward(chain: MlChainProblem, P: PMatrixSet, forward, lowest: int) -> dict[int, np.ndarray]:
    p = chain.problem
    m0 = {(i, i + 1): msg for i, (msg, _) in enumerate(forward)}
    state = init_state(p, m0=m0)
    # the root's u block is unconstrained and has no cost: take the
    # minimum-norm solution there
    local = QuadraticLocalMinimizer(p, P, min_norm=True)
    out = {}
    for i in range(chain.root, lowest - 1, -1):
        state = async_step(p, P, state, i, local)
        out[i] = state.x[i]
    return out


def pdmm_smoother(m: StateSpaceModel, ys, lag: int | None = None) -> SmootherResult:
    """Forward messages followed by a backward pass down the chain.

    Without ``lag`` the backward pass covers the whole chain once all
    measurements are in (a fixed-interval smoother). With ``lag = k`` the
    chain is processed online and at step ``l`` only nodes ``l+1`` down to
    ``l-k`` are refreshed, so node ``i`` ends up conditioned on
    ``y_0 .. y_{min(i+k, L)}``.
    """
    ys = _measurements(m, ys)
    L = ys.shape[0] - 1
    if lag is not None and (int(lag) != lag or lag < 0):
        raise ValidationError(f"lag must be a non-negative integer, got {lag!r}")
    u = np.zeros((L + 2, m.r))
    z = np.zeros((L + 2, m.n))
    steps = range(L + 1) if lag is not None and lag < L else [L]
    for l in steps:
        chain = ml_chain_problem(m, ys[:l + 1])
        P = build_P_statespace(m, l)
        lowest = 0 if lag is None else max(0, l - int(lag))
        for i, x in _backward(chain, P, pdmm_filter(m, ys[:l + 1]), lowest).items():
            u[i], z[i] = x[:m.r], x[m.r:]
    return SmootherResult(u, z, None if lag is None else int(lag))


def message_recursion_matrices(P_prev, F, H, R) -> tuple[np.ndarray, np.ndarray]:
    """Matrices multiplying the previous message and the measurement.

    ``F (P^{-1} + H' R^{-1} H)^{-1} P^{-1}`` and ``F (P^{-1} + H' R^{-1} H)^{-1} H' R^{-1}``;
    with ``P = D`` they reduce to ``F - K H`` and ``K``.
    """
    P_inv = _sym_inv(np.atleast_2d(P_prev))
    R_inv = _sym_inv(np.atleast_2d(R))
    info = P_inv + H.T @ R_inv @ H
    return F @ np.linalg.solve(info, P_inv), F @ np.linalg.solve(info, H.T @ R_inv)


@dataclass(frozen=True)
class Trajectory:
    z: np.ndarray  # (horizon + 1, n)
    y: np.ndarray  # (horizon, q)
    u: np.ndarray  # (horizon, r)


def simulate_trajectory(m: StateSpaceModel, seed: int) -> Trajectory:
    rng = np.random.default_rng(seed)
    T = m.horizon
    z0 = np.linalg.cholesky(m.Pi0) @ rng.standard_normal(m.n)
    u = np.einsum("tij,tj->ti", np.linalg.cholesky(m.Q), rng.standard_normal((T, m.r)))
    v = np.einsum("tij,tj->ti", np.linalg.cholesky(m.R), rng.standard_normal((T, m.q)))
    z = np.zeros((T + 1, m.n))
    z[0] = z0
    for l in range(T):
        z[l + 1] = m.F[l] @ z[l] + m.G[l] @ u[l]
    y = np.einsum("tij,tj->ti", m.H, z[:T]) + v
    return Trajectory(z, y, u)
