"""Greedy unweighted Graclus matching, pair pooling/unpooling and scale hierarchies."""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Graph, GraphInputError, disjoint_union, from_edge_list


@dataclass(frozen=True)
class Pairing:
    """Partition of fine nodes into clusters of one or two nodes.

    ``clusters[q]`` lists the fine nodes merged into coarse node ``q`` and
    ``parent_of[i]`` is the coarse node that fine node ``i`` belongs to.
    """

    clusters: tuple[tuple[int, ...], ...]
    parent_of: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        parent = np.ascontiguousarray(self.parent_of, dtype=np.int64)
        parent.setflags(write=False)
        object.__setattr__(self, "parent_of", parent)

    @classmethod
    def from_clusters(cls, clusters: Sequence[Sequence[int]], n_fine: int) -> "Pairing":
        parent = np.full(n_fine, -1, dtype=np.int64)
        for q, group in enumerate(clusters):
            if not 1 <= len(group) <= 2:
                raise GraphInputError(f"cluster {q} has {len(group)} nodes")
            for i in group:
                if parent[i] >= 0:
                    raise GraphInputError(f"node {i} appears in two clusters")
                parent[i] = q
        if (parent < 0).any():
            raise GraphInputError(f"node {int(np.argmin(parent))} is in no cluster")
        return cls(tuple(tuple(int(i) for i in c) for c in clusters), parent)

    @property
    def n_fine(self) -> int:
        return len(self.parent_of)

    @property
    def n_coarse(self) -> int:
        return len(self.clusters)

    @functools.cached_property
    def pool_matrix(self) -> sp.csr_matrix:
        """(n_coarse x n_fine) averaging operator: 1/|cluster| on member columns."""
        sizes = np.array([len(c) for c in self.clusters], dtype=float)
        rows = self.parent_of
        data = 1.0 / sizes[rows]
        cols = np.arange(self.n_fine)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_coarse, self.n_fine))

    def validate(self, g: Graph) -> None:
        """Raise unless this is a matching-with-singletons of ``g``."""
        if self.n_fine != g.n:
            raise GraphInputError(f"pairing covers {self.n_fine} nodes, graph has {g.n}")
        seen = np.zeros(g.n, dtype=bool)
        for q, group in enumerate(self.clusters):
            if not 1 <= len(group) <= 2:
                raise GraphInputError(f"cluster {q} has {len(group)} nodes")
            for i in group:
                if seen[i] or self.parent_of[i] != q:
                    raise GraphInputError(f"node {i} inconsistently assigned")
                seen[i] = True
            if len(group) == 2 and group[1] not in g.neighbors(group[0]):
                raise GraphInputError(f"cluster {group} is not an edge")
        if not seen.all():
            raise GraphInputError("pairing does not cover every node")


def visit_order(n: int, seed: int | None) -> np.ndarray:
    """Seeded random permutation, or the identity order when ``seed`` is None."""
    if seed is None:
        return np.arange(n)
    return np.random.default_rng(seed).permutation(n)


def graclus_match(g: Graph, seed: int | None = 0, order: Sequence[int] | None = None) -> Pairing:
    """Single-pass greedy matching, ignoring edge weights.

    Nodes are visited in ``order`` (default: a permutation drawn from ``seed``).
    An unmatched node is paired with its unmatched neighbor that comes first in
    the visit order; if none is left it becomes a singleton cluster. Clusters
    are numbered in the order they are formed.
    """
    order = visit_order(g.n, seed) if order is None else np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(g.n)):
        raise GraphInputError("order must be a permutation of the nodes")
    rank = np.empty(g.n, dtype=np.int64)
    rank[order] = np.arange(g.n)
    matched = np.zeros(g.n, dtype=bool)
    clusters: list[tuple[int, ...]] = []
    for u in order.tolist():
        if matched[u]:
            continue
        matched[u] = True
        nbrs = g.neighbors(u)
        free = nbrs[~matched[nbrs]]
        if len(free):
            v = int(free[np.argmin(rank[free])])
            matched[v] = True
            clusters.append((u, v))
        else:
            clusters.append((u,))
    return Pairing.from_clusters(clusters, g.n)


def pool_graph(g: Graph, p: Pairing) -> Graph:
    """Contract every cluster; coarse nodes are adjacent iff some fine edge joins them."""
    e = g.edges()
    if len(e) == 0:
        return from_edge_list([], p.n_coarse)
    ce = p.parent_of[e]
    ce = ce[ce[:, 0] != ce[:, 1]]
    return from_edge_list(ce, p.n_coarse)


def _check_rows(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != n:
        raise GraphInputError(f"{what}: expected {n} rows, got {x.shape[0]}")
    return x


def pool_features(x: np.ndarray, p: Pairing) -> np.ndarray:
    """Mean of each cluster's rows (a singleton keeps its row)."""
    x = _check_rows(x, p.n_fine, "pool_features")
    return p.pool_matrix @ x


def unpool_features(x_coarse: np.ndarray, p: Pairing) -> np.ndarray:
    """Copy every coarse row back to each of its cluster members."""
    x_coarse = _check_rows(x_coarse, p.n_coarse, "unpool_features")
    return x_coarse[p.parent_of]


@dataclass(frozen=True)
class ScaleHierarchy:
    """Graphs ``graphs[0..S']`` with ``pairings[s]`` mapping scale s onto s+1."""

    graphs: tuple[Graph, ...]
    pairings: tuple[Pairing, ...]
    requested_scales: int = 0
    seed: int | None = None

    @property
    def scales(self) -> int:
        """Effective number of coarsening steps (may be below the requested one)."""
        return len(self.pairings)

    @property
    def node_counts(self) -> list[int]:
        return [g.n for g in self.graphs]

    @property
    def edge_counts(self) -> list[int]:
        return [g.m for g in self.graphs]


def build_hierarchy(
    g: Graph, scales: int, seed: int | None = 0, budget_slack: float = 0.5
) -> ScaleHierarchy:
    """Coarsen ``g`` up to ``scales`` times, stopping once a level has no edges left.

    A single node is the common case; an edgeless level would only reproduce
    itself, so it ends the hierarchy too (``scales`` records the effective count).

    Each level draws its own visit order from a single generator seeded with
    ``seed``; ``seed=None`` visits nodes in index order at every level. A
    warning is issued when the total node count exceeds ``(2 + budget_slack) * n``.
    """
    if scales < 0:
        raise GraphInputError("scales must be >= 0")
    rng = None if seed is None else np.random.default_rng(seed)
    graphs = [g]
    pairings = []
    for _ in range(scales):
        cur = graphs[-1]
        if cur.m == 0:
            break
        order = np.arange(cur.n) if rng is None else rng.permutation(cur.n)
        p = graclus_match(cur, order=order)
        pairings.append(p)
        graphs.append(pool_graph(cur, p))
    total = sum(h.n for h in graphs)
    if total > (2 + budget_slack) * g.n:
        warnings.warn(
            f"hierarchy holds {total} nodes, above {(2 + budget_slack):.2f} x {g.n}; "
            "graph matches poorly (star-like or sparse)",
            stacklevel=2,
        )
    return ScaleHierarchy(tuple(graphs), tuple(pairings), scales, seed)


@functools.lru_cache(maxsize=256)
def cached_hierarchy(g: Graph, scales: int, seed: int | None = 0) -> ScaleHierarchy:
    """Memoized :func:`build_hierarchy`; pairings stay fixed for a given graph."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_hierarchy(g, scales, seed)


def replicate_hierarchy(hier: ScaleHierarchy, copies: int) -> ScaleHierarchy:
    """Disjoint union of ``copies`` identical hierarchies (for batching instances)."""
    graphs = tuple(disjoint_union([g] * copies) for g in hier.graphs)
    pairings = []
    for s, p in enumerate(hier.pairings):
        nf, nc = hier.graphs[s].n, hier.graphs[s + 1].n
        parent = np.concatenate([p.parent_of + b * nc for b in range(copies)])
        clusters = tuple(
            tuple(i + b * nf for i in c) for b in range(copies) for c in p.clusters
        )
        pairings.append(Pairing(clusters, parent))
    return ScaleHierarchy(graphs, tuple(pairings), hier.requested_scales, hier.seed)


def pairing_matrix(p: Pairing) -> np.ndarray:
    """Dense 0/1 fine-to-coarse assignment matrix (n_fine x n_coarse)."""
    P = np.zeros((p.n_fine, p.n_coarse))
    P[np.arange(p.n_fine), p.parent_of] = 1.0
    return P
