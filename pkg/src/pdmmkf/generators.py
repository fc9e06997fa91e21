"""Seeded random instances for tests, benchmarks and the CLI demo."""

from __future__ import annotations

import numpy as np

from .graph import build_graph
from .problem import Problem, build_problem


def random_tree_edges(node_count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform random attachment tree with randomly permuted labels."""
    perm = rng.permutation(node_count)
    edges = []
    for k in range(1, node_count):
        parent = int(rng.integers(k))
        edges.append((int(perm[k]), int(perm[parent])))
    order = rng.permutation(len(edges))
    return [edges[k] for k in order]


def random_chain_edges(node_count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    perm = rng.permutation(node_count)
    return [(int(perm[k]), int(perm[k + 1])) for k in range(node_count - 1)]


def random_spd(n: int, rng: np.random.Generator, shift: float = 0.5) -> np.ndarray:
    B = rng.standard_normal((n, n))
    return B @ B.T / n + shift * np.eye(n)


def random_block(rows: int, cols: int, rng: np.random.Generator, max_cond: float | None = 20.0) -> np.ndarray:
    """Gaussian ``rows x cols`` block, redrawn until its condition number is at most ``max_cond``."""
    while True:
        B = rng.standard_normal((rows, cols))
        if max_cond is None or np.linalg.cond(B) <= max_cond:
            return B


def random_problem(edges, node_count: int, rng: np.random.Generator, max_dim: int = 3,
                   psd_only: bool = False, max_cond: float | None = 20.0) -> Problem:
    """Quadratic problem on the given edges.

    Every ``Sigma_i`` is positive definite (positive semi-definite with a
    rank drop when ``psd_only``). Each constraint has ``n_ij <= min(n_i, n_j)``
    rows and both blocks have condition number at most ``max_cond``, so they
    have full row rank with a margin; ``max_cond=None`` keeps plain Gaussian
    blocks, which are only full rank almost surely.
    """
    g = build_graph(node_count, edges)
    dims = rng.integers(1, max_dim + 1, size=node_count)
    objectives = []
    for n in dims:
        if psd_only and n > 1:
            B = rng.standard_normal((n, n - 1))
            S = B @ B.T
        else:
            S = random_spd(int(n), rng)
        objectives.append((S, rng.standard_normal(n)))
    constraints = []
    for i, j in g.edges:
        m = int(rng.integers(1, min(dims[i], dims[j]) + 1))
        constraints.append((random_block(m, int(dims[i]), rng, max_cond),
                            random_block(m, int(dims[j]), rng, max_cond),
                            rng.standard_normal(m)))
    return build_problem(g, objectives, constraints)


def random_tree_problem(rng: np.random.Generator, max_nodes: int = 12, max_dim: int = 3,
                        min_nodes: int = 1) -> Problem:
    m = int(rng.integers(min_nodes, max_nodes + 1))
    return random_problem(random_tree_edges(m, rng), m, rng, max_dim)


def random_chain_problem(rng: np.random.Generator, max_nodes: int = 10, max_dim: int = 3,
                         min_nodes: int = 2) -> Problem:
    m = int(rng.integers(min_nodes, max_nodes + 1))
    return random_problem(random_chain_edges(m, rng), m, rng, max_dim)


def consensus_problem(edges, node_count: int, rng: np.random.Generator) -> Problem:
    """Scalar weighted averaging: ``x_i - x_j = 0`` on every edge."""
    g = build_graph(node_count, edges)
    objectives = [(rng.uniform(0.5, 2.0), rng.standard_normal()) for _ in range(node_count)]
    constraints = [([[1.0]], [[-1.0]], [0.0]) for _ in g.edges]
    return build_problem(g, objectives, constraints)


def random_model(rng: np.random.Generator, max_dim: int = 4, max_horizon: int = 10):
    """Time-varying state-space model with random SPD noise covariances."""
    from .kalman import StateSpaceModel

    n, r, q = (int(v) for v in rng.integers(1, max_dim + 1, size=3))
    T = int(rng.integers(1, max_horizon + 1))
    F = rng.standard_normal((T, n, n)) / np.sqrt(n)
    G = rng.standard_normal((T, n, r))
    H = rng.standard_normal((T, q, n))
    Q = np.stack([random_spd(r, rng) for _ in range(T)])
    R = np.stack([random_spd(q, rng) for _ in range(T)])
    return StateSpaceModel(F, G, H, Q, R, random_spd(n, rng))
