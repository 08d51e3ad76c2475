"""Immutable undirected graphs in CSR form, Laplacian views and edge-list IO."""

from __future__ import annotations

from collections import deque
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphInputError(ValueError):
    """Raised for invalid node indices, self-loops or shape mismatches."""


class GraphParseError(ValueError):
    """Raised for malformed edge-list files; carries the offending line number."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


class Graph:
    """Undirected, unweighted graph stored as a symmetric CSR adjacency.

    Each undirected edge appears twice in ``csr_neighbors``. Rows are sorted,
    contain no duplicates and no self-loops. Instances are immutable.
    """

    __slots__ = ("n", "csr_offsets", "csr_neighbors", "_cache")

    def __init__(self, n: int, csr_offsets: np.ndarray, csr_neighbors: np.ndarray):
        self.n = int(n)
        self.csr_offsets = _frozen(csr_offsets)
        self.csr_neighbors = _frozen(csr_neighbors)
        self._cache: dict = {}
        if self.csr_offsets.shape != (self.n + 1,):
            raise GraphInputError("csr_offsets must have length n+1")
        if self.csr_offsets[-1] != len(self.csr_neighbors):
            raise GraphInputError("csr_offsets[n] must equal len(csr_neighbors)")

    @classmethod
    def from_edge_list(cls, edges: Iterable[Sequence[int]], n: int) -> "Graph":
        return from_edge_list(edges, n)

    @property
    def m(self) -> int:
        return len(self.csr_neighbors) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def degree(self, i: int) -> int:
        return degree(self, i)

    def neighbors(self, i: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[i] : self.csr_offsets[i + 1]]

    def edges(self) -> np.ndarray:
        """Return an (m, 2) array of edges with u < v, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        keep = rows < self.csr_neighbors
        return np.stack([rows[keep], self.csr_neighbors[keep]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        """Binary adjacency as a scipy CSR matrix (cached)."""
        if "A" not in self._cache:
            data = np.ones(len(self.csr_neighbors))
            self._cache["A"] = sp.csr_matrix(
                (data, self.csr_neighbors, self.csr_offsets), shape=(self.n, self.n)
            )
        return self._cache["A"]

    def laplacian(self) -> sp.csr_matrix:
        if "L" not in self._cache:
            self._cache["L"] = (sp.diags(self.degrees.astype(float)) - self.adjacency()).tocsr()
        return self._cache["L"]

    def bfs_distances(self, source: int) -> np.ndarray:
        """Hop distances from ``source``; unreachable nodes get -1."""
        return bfs_distances(self, source)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Return the graph with node ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm)
        e = self.edges()
        return from_edge_list(perm[e], self.n) if len(e) else empty_graph(self.n)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.csr_offsets, other.csr_offsets)
            and np.array_equal(self.csr_neighbors, other.csr_neighbors)
        )

    def __hash__(self) -> int:
        return hash((self.n, self.csr_neighbors.tobytes(), self.csr_offsets.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m})"


def empty_graph(n: int) -> Graph:
    return Graph(n, np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))


def from_edge_list(edges: Iterable[Sequence[int]], n: int) -> Graph:
    """Build a deduplicated, symmetrized CSR graph from ``(u, v)`` pairs."""
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if e.size == 0:
        return empty_graph(n)
    e = e.reshape(-1, 2)
    if e.min() < 0 or e.max() >= n:
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise GraphInputError(f"edge {tuple(bad)} out of range for n={n}")
    loops = e[:, 0] == e[:, 1]
    if loops.any():
        raise GraphInputError(f"self-loop at node {e[loops][0, 0]}")
    both = np.concatenate([e, e[:, ::-1]])
    both = np.unique(both, axis=0)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, both[:, 0] + 1, 1)
    return Graph(n, np.cumsum(offsets), both[:, 1])


def disjoint_union(graphs: Sequence[Graph]) -> Graph:
    """Block-diagonal union; node ids of ``graphs[i]`` are shifted by the sizes before it."""
    shift = 0
    offsets = [np.zeros(1, dtype=np.int64)]
    neighbors = []
    for g in graphs:
        offsets.append(g.csr_offsets[1:] + offsets[-1][-1])
        neighbors.append(g.csr_neighbors + shift)
        shift += g.n
    nb = np.concatenate(neighbors) if neighbors else np.zeros(0, dtype=np.int64)
    return Graph(shift, np.concatenate(offsets), nb)


def degree(g: Graph, i: int) -> int:
    if not 0 <= i < g.n:
        raise GraphInputError(f"node {i} out of range for n={g.n}")
    return int(g.csr_offsets[i + 1] - g.csr_offsets[i])


def laplacian_apply(g: Graph, x: np.ndarray) -> np.ndarray:
    """Return ``(D - A) x`` using the sparse adjacency; ``x`` is (n,) or (n, c)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != g.n:
        raise GraphInputError(f"feature rows {x.shape[0]} != n={g.n}")
    deg = g.degrees.astype(float)
    if x.ndim == 2:
        deg = deg[:, None]
    return deg * x - g.adjacency() @ x


def check_features(g: Graph, x: np.ndarray) -> np.ndarray:
    """Validate a node-feature matrix (n x c, finite) against ``g``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != g.n:
        raise GraphInputError(f"expected features of shape ({g.n}, c), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise GraphInputError("features contain non-finite entries")
    return x


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


# --- standard families ---------------------------------------------------


def path_graph(n: int) -> Graph:
    return from_edge_list([(i, i + 1) for i in range(n - 1)], n)


def cycle_graph(n: int) -> Graph:
    return from_edge_list([(i, (i + 1) % n) for i in range(n)], n)


def complete_graph(n: int) -> Graph:
    return from_edge_list([(i, j) for i in range(n) for j in range(i + 1, n)], n)


def grid_graph(rows: int, cols: int | None = None) -> Graph:
    """4-connected lattice; node ``r * cols + c`` sits at row r, column c."""
    cols = rows if cols is None else cols
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return from_edge_list(np.concatenate([horiz, vert]), rows * cols)


# --- file IO -------------------------------------------------------------


def parse_graph(text: str) -> Graph:
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            raise GraphParseError(f"non-integer token in {raw!r}", lineno) from None
        if n is None:
            if len(values) != 1 or values[0] < 0:
                raise GraphParseError("first line must be the node count", lineno)
            n = values[0]
            continue
        if len(values) != 2:
            raise GraphParseError(f"expected 'u v', got {raw!r}", lineno)
        u, v = values
        if not (0 <= u < n and 0 <= v < n):
            raise GraphParseError(f"node index out of range for n={n}", lineno)
        if u == v:
            raise GraphParseError(f"self-loop at node {u}", lineno)
        edges.append((u, v))
    if n is None:
        raise GraphParseError("missing node count", 1)
    return from_edge_list(edges, n)


def format_graph(g: Graph) -> str:
    lines = [str(g.n)]
    lines.extend(f"{u} {v}" for u, v in g.edges())
    return "\n".join(lines) + "\n"


def read_graph_file(path: str | Path) -> Graph:
    return parse_graph(Path(path).read_text())


def write_graph_file(g: Graph, path: str | Path) -> None:
    Path(path).write_text(format_graph(g))


def read_features(path: str | Path) -> np.ndarray:
    """Node features from CSV: one row per node, one column per channel."""
    x = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if not np.all(np.isfinite(x)):
        raise GraphInputError(f"{path}: features contain non-finite entries")
    return x


def write_features(x: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, np.asarray(x, dtype=float), delimiter=",", fmt="%.17g")
