"""Undirected graph container, degree-aware edge ops, and adjacency normalization.

Graphs are simple (no self-loops, no multi-edges) and stored twice: a canonical
edge array with ``u < v`` per row, and a CSR neighbor structure with both
directions materialized. All node ids are dense integers in ``[0, num_nodes)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "GraphError",
    "LabelSet",
    "NormalizedAdjacency",
    "build_graph",
    "degree",
    "drop_edges",
    "normalize_adjacency",
]

NORMALIZATIONS = ("renormalized", "row-mean", "none")


class GraphError(ValueError):
    """Raised for malformed graph input (bad ids, self-loops, partition errors)."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph.

    Attributes
    ----------
    num_nodes:
        Size of the node universe. Isolated nodes are allowed.
    edges:
        ``(E, 2)`` int64 array, one undirected edge per row, canonicalized to
        ``u < v`` and sorted lexicographically.
    csr_offsets, csr_targets:
        Compressed sparse rows over both edge directions; the neighbors of
        node ``i`` are ``csr_targets[csr_offsets[i]:csr_offsets[i + 1]]``,
        sorted ascending.
    features:
        Optional ``(num_nodes, dim)`` float64 node feature matrix.
    bipartite:
        ``(num_users, num_items)`` when the graph is a user-item graph; users
        occupy ids ``[0, num_users)`` and items ``[num_users, num_nodes)``.
    """

    num_nodes: int
    edges: np.ndarray
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray | None = None
    bipartite: tuple[int, int] | None = None

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, node: int) -> np.ndarray:
        _check_node(self, node)
        return self.csr_targets[self.csr_offsets[node]:self.csr_offsets[node + 1]]

    def degrees(self) -> np.ndarray:
        """Degree of every node as an int64 array."""
        return np.diff(self.csr_offsets)

    def neighbor_sets(self) -> list[set[int]]:
        off, tgt = self.csr_offsets, self.csr_targets
        return [set(tgt[off[i]:off[i + 1]].tolist()) for i in range(self.num_nodes)]

    def edge_hash(self) -> str:
        """Stable hex digest of the edge structure (used to tag eval reports)."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.num_nodes).tobytes())
        h.update(np.ascontiguousarray(self.edges, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def _check_node(graph: Graph, node: int) -> None:
    if not 0 <= node < graph.num_nodes:
        raise GraphError(f"node {node} out of range [0, {graph.num_nodes})")


def _csr_from_edges(num_nodes: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if edges.size == 0:
        return np.zeros(num_nodes + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    counts = np.bincount(src, minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, dst[order]


def build_graph(
    edge_list,
    num_nodes: int,
    features=None,
    bipartite: tuple[int, int] | None = None,
) -> Graph:
    """Validate and canonicalize an edge list into a :class:`Graph`.

    Edges may appear in either orientation and with duplicates; the result is
    deduplicated and stored with ``u < v``. Self-loops and out-of-range ids are
    errors, as are bipartite graphs with an edge inside one partition.
    """
    if num_nodes < 0:
        raise GraphError(f"num_nodes must be nonnegative, got {num_nodes}")
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= num_nodes:
            bad = edges[(edges < 0).any(axis=1) | (edges >= num_nodes).any(axis=1)][0]
            raise GraphError(
                f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {num_nodes})"
            )
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            raise GraphError(f"self-loop at node {int(edges[loops][0, 0])}")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    if bipartite is not None:
        num_users, num_items = int(bipartite[0]), int(bipartite[1])
        if num_users < 0 or num_items < 0 or num_users + num_items != num_nodes:
            raise GraphError(
                f"bipartite sizes {bipartite} do not sum to num_nodes={num_nodes}"
            )
        if edges.size:
            crosses = (edges[:, 0] < num_users) & (edges[:, 1] >= num_users)
            if not crosses.all():
                bad = edges[~crosses][0]
                raise GraphError(
                    f"edge ({bad[0]}, {bad[1]}) does not cross the user/item partition"
                )
        bipartite = (num_users, num_items)

    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise GraphError(
                f"features must be (num_nodes, dim), got shape {features.shape}"
            )

    offsets, targets = _csr_from_edges(num_nodes, edges)
    return Graph(num_nodes, edges, offsets, targets, features, bipartite)


def degree(graph: Graph, node: int) -> int:
    """Number of neighbors of ``node``."""
    _check_node(graph, node)
    return int(graph.csr_offsets[node + 1] - graph.csr_offsets[node])


def drop_edges(graph: Graph, alpha: float, seed: int) -> Graph:
    """Remove exactly ``floor(alpha * num_edges)`` undirected edges at random.

    Edges are chosen uniformly without replacement with a generator seeded by
    ``seed``, so the result is deterministic per ``(graph, alpha, seed)``. Both
    directions of a dropped edge disappear together; features and the bipartite
    partition carry over unchanged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise GraphError(f"alpha must be in [0, 1], got {alpha}")
    num_drop = int(np.floor(alpha * graph.num_edges))
    if num_drop == 0:
        return graph
    rng = np.random.default_rng(seed)
    dropped = rng.choice(graph.num_edges, size=num_drop, replace=False)
    keep = np.ones(graph.num_edges, dtype=bool)
    keep[dropped] = False
    kept_edges = graph.edges[keep]
    offsets, targets = _csr_from_edges(graph.num_nodes, kept_edges)
    return Graph(
        graph.num_nodes, kept_edges, offsets, targets, graph.features, graph.bipartite
    )


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Sparse aggregation operator in CSR form.

    ``mode`` is one of ``renormalized`` (symmetric degree-scaled adjacency with
    self-loops), ``row-mean`` (neighbor averaging, isolated nodes fall back to a
    unit self-entry), or ``none`` (raw 0/1 adjacency, no self-loops). ``rows``
    repeats each row index per stored entry; ``t_perm``/``t_offsets`` give the
    transpose's CSR ordering so both A·X and Aᵀ·X are single segment-sums.
    """

    num_nodes: int
    offsets: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    mode: str
    rows: np.ndarray = field(repr=False, default=None)
    t_offsets: np.ndarray = field(repr=False, default=None)
    t_perm: np.ndarray = field(repr=False, default=None)

    @property
    def nnz(self) -> int:
        return int(self.targets.shape[0])


def _finish_adjacency(
    num_nodes: int,
    offsets: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    mode: str,
) -> NormalizedAdjacency:
    counts = np.diff(offsets)
    rows = np.repeat(np.arange(num_nodes, dtype=np.int64), counts)
    t_perm = np.lexsort((rows, targets))
    t_counts = np.bincount(targets, minlength=num_nodes)
    t_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(t_counts, out=t_offsets[1:])
    return NormalizedAdjacency(
        num_nodes, offsets, targets, weights, mode, rows, t_offsets, t_perm
    )


def normalize_adjacency(graph: Graph, mode: str = "renormalized") -> NormalizedAdjacency:
    """Build the aggregation operator used by the encoders.

    ``renormalized``: entry (i, j) is ``1 / sqrt(d̃_i · d̃_j)`` over the
    self-looped support, with ``d̃ = degree + 1``; symmetric, and exactly the
    identity on an edgeless graph. ``row-mean``: each neighbor of i gets
    ``1 / degree(i)``; an isolated node gets a single self-entry of 1 so every
    row sums to 1. ``none``: unit weights on the raw neighbor structure.
    """
    if mode not in NORMALIZATIONS:
        raise GraphError(f"unknown normalization {mode!r}, expected one of {NORMALIZATIONS}")
    n = graph.num_nodes
    deg = graph.degrees()

    if mode == "none":
        weights = np.ones(graph.csr_targets.shape[0], dtype=np.float64)
        return _finish_adjacency(n, graph.csr_offsets, graph.csr_targets, weights, mode)

    base_rows = np.repeat(np.arange(n, dtype=np.int64), deg)

    if mode == "row-mean":
        isolated = np.flatnonzero(deg == 0)
        rows = np.concatenate([base_rows, isolated])
        targets = np.concatenate([graph.csr_targets, isolated])
        order = np.lexsort((targets, rows))
        rows, targets = rows[order], targets[order]
        inv = np.where(deg == 0, 1.0, 1.0 / np.maximum(deg, 1))
        weights = inv[rows]
        counts = np.where(deg == 0, 1, deg)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return _finish_adjacency(n, offsets, targets, weights, mode)

    # renormalized: support is neighbors plus a self-loop on every node
    self_ids = np.arange(n, dtype=np.int64)
    rows = np.concatenate([base_rows, self_ids])
    targets = np.concatenate([graph.csr_targets, self_ids])
    order = np.lexsort((targets, rows))
    rows, targets = rows[order], targets[order]
    inv_sqrt = 1.0 / np.sqrt(deg.astype(np.float64) + 1.0)
    weights = inv_sqrt[rows] * inv_sqrt[targets]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg + 1, out=offsets[1:])
    return _finish_adjacency(n, offsets, targets, weights, mode)


@dataclass
class LabelSet:
    """Ground-truth class labels for a node universe.

    ``labels[i]`` is the class of node i, or -1 when unknown. ``is_pseudo``
    marks provenance (model-assigned rather than observed); ground truth from
    generators or files is all-False. The optional index arrays are filled in
    by the split protocols and consumed by pseudo-labeling.
    """

    labels: np.ndarray
    num_classes: int
    is_pseudo: np.ndarray | None = None
    train_labeled: np.ndarray | None = None
    validation: np.ndarray | None = None
    unlabeled: np.ndarray | None = None
    new_nodes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise GraphError(f"labels must be 1-d, got shape {self.labels.shape}")
        if self.num_classes < 1:
            raise GraphError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.labels.size and self.labels.max() >= self.num_classes:
            raise GraphError(
                f"label {int(self.labels.max())} >= num_classes={self.num_classes}"
            )
        if self.is_pseudo is None:
            self.is_pseudo = np.zeros(self.labels.shape[0], dtype=bool)

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    def with_splits(
        self,
        train_labeled: np.ndarray,
        validation: np.ndarray,
        unlabeled: np.ndarray,
        new_nodes: np.ndarray,
    ) -> "LabelSet":
        return LabelSet(
            self.labels.copy(),
            self.num_classes,
            self.is_pseudo.copy(),
            np.asarray(train_labeled, dtype=np.int64),
            np.asarray(validation, dtype=np.int64),
            np.asarray(unlabeled, dtype=np.int64),
            np.asarray(new_nodes, dtype=np.int64),
        )
