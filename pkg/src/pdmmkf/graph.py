"""Undirected graphs, tree checks and root-based orientation.

Neighbour iteration is always in ascending node id, which makes every
traversal (and therefore every schedule built on top of it)
deterministic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import GraphError

Edge = tuple[int, int]


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes ``0 .. node_count-1``.

    ``edges`` keeps the caller's order (edge ``k`` is the ``k``-th pair
    given to :func:`build_graph`) with every pair stored as ``(min, max)``.
    """

    node_count: int
    edges: tuple[Edge, ...]
    adjacency: tuple[tuple[int, ...], ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._index:
            self._index.update({e: k for k, e in enumerate(self.edges)})

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def edge_index(self, i: int, j: int) -> int:
        """Position of the undirected edge ``(i, j)`` in :attr:`edges`."""
        key = (i, j) if i < j else (j, i)
        try:
            return self._index[key]
        except KeyError:
            raise GraphError(f"({i}, {j}) is not an edge") from None

    def has_edge(self, i: int, j: int) -> bool:
        return ((i, j) if i < j else (j, i)) in self._index

    def directed_pairs(self) -> list[Edge]:
        """Both orientations of every edge, ordered by (tail, head)."""
        return [(i, j) for i in range(self.node_count) for j in self.adjacency[i]]


def build_graph(node_count: int, edge_list: Iterable[Sequence[int]]) -> Graph:
    if int(node_count) != node_count or node_count < 1:
        raise GraphError(f"node_count must be a positive integer, got {node_count!r}")
    node_count = int(node_count)
    edges: list[Edge] = []
    seen: set[Edge] = set()
    adj: list[set[int]] = [set() for _ in range(node_count)]
    for pair in edge_list:
        if len(pair) != 2:
            raise GraphError(f"edge {tuple(pair)!r} is not a pair")
        i, j = int(pair[0]), int(pair[1])
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise GraphError(f"edge ({i}, {j}) has a node id outside [0, {node_count})")
        if i == j:
            raise GraphError(f"edge ({i}, {j}) is a self-loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"edge ({i}, {j}) is a duplicate")
        seen.add(key)
        edges.append(key)
        adj[i].add(j)
        adj[j].add(i)
    return Graph(node_count, tuple(edges), tuple(tuple(sorted(s)) for s in adj))


def bfs_distances(g: Graph, source: int) -> list[int | None]:
    dist: list[int | None] = [None] * g.node_count
    dist[source] = 0
    queue = deque([source])
    while queue:
        i = queue.popleft()
        for j in g.adjacency[i]:
            if dist[j] is None:
                dist[j] = dist[i] + 1
                queue.append(j)
    return dist


def is_connected(g: Graph) -> bool:
    return all(d is not None for d in bfs_distances(g, 0))


def is_tree(g: Graph) -> bool:
    return len(g.edges) == g.node_count - 1 and is_connected(g)


def is_chain(g: Graph) -> bool:
    """A tree in which no node has more than two neighbours."""
    return is_tree(g) and all(len(n) <= 2 for n in g.adjacency)


@dataclass(frozen=True)
class Orientation:
    """A tree turned into a DAG whose edges all point towards ``root``.

    ``directed_edges`` is listed leaves-first: descending distance of the
    tail, ties broken by ascending tail id. Processing the edges in that
    order guarantees every preceding edge has been handled already.
    """

    root: int
    dist: tuple[int, ...]
    parent: tuple[int | None, ...]
    directed_edges: tuple[Edge, ...]
    graph_radius: int

    def children(self, i: int) -> list[int]:
        return [u for u, p in enumerate(self.parent) if p == i]

    def backward_nodes(self) -> list[int]:
        """Nodes root-first (ascending distance, then id)."""
        return sorted(range(len(self.dist)), key=lambda i: (self.dist[i], i))

    def path_to_root(self, i: int) -> list[int]:
        path = [i]
        while self.parent[path[-1]] is not None:
            path.append(self.parent[path[-1]])
        return path


def orient_to_root(g: Graph, r: int) -> Orientation:
    if not 0 <= r < g.node_count:
        raise GraphError(f"root {r} is not a node of the graph")
    if not is_tree(g):
        raise GraphError("orientation requires a tree (connected, node_count - 1 edges)")
    dist = bfs_distances(g, r)
    parent: list[int | None] = [None] * g.node_count
    for i in range(g.node_count):
        if i != r:
            # on a tree exactly one neighbour is one step closer to the root
            parent[i] = next(j for j in g.adjacency[i] if dist[j] == dist[i] - 1)
    order = sorted((i for i in range(g.node_count) if i != r), key=lambda i: (-dist[i], i))
    directed = tuple((i, parent[i]) for i in order)
    return Orientation(r, tuple(dist), tuple(parent), directed, max(dist))


def tree_center(g: Graph) -> int:
    """Node of smallest eccentricity (smallest id on ties)."""
    if not is_tree(g):
        raise GraphError("tree_center requires a tree")
    best, best_ecc = 0, None
    for i in range(g.node_count):
        ecc = max(bfs_distances(g, i))
        if best_ecc is None or ecc < best_ecc:
            best, best_ecc = i, ecc
    return best


def chain_endpoints(g: Graph) -> list[int]:
    if not is_chain(g):
        raise GraphError("graph is not a chain")
    if g.node_count == 1:
        return [0]
    return [i for i in range(g.node_count) if len(g.adjacency[i]) == 1]
