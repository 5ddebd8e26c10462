"""Training objectives: cross-entropy, pairwise ranking with sampled negatives,
and embedding regularization, plus the supervision container they share."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph

__all__ = [
    "LossError",
    "SupervisionSet",
    "bpr_loss",
    "cross_entropy",
    "l2_regularize",
    "sample_negatives",
]


class LossError(ValueError):
    """Invalid supervision or loss input."""


@dataclass
class SupervisionSet:
    """What the trainer fits against.

    Classification: ``nodes``/``classes``/``is_pseudo`` aligned arrays with no
    duplicate nodes. Ranking (link or recsys): ``positive_pairs`` of
    (source, target) rows, with a per-source adjacency for negative-candidate
    exclusion, plus the candidate pool (all nodes for link prediction, the item
    partition for recsys).
    """

    task: str
    num_nodes: int
    nodes: np.ndarray | None = None
    classes: np.ndarray | None = None
    is_pseudo: np.ndarray | None = None
    positive_pairs: np.ndarray | None = None
    pool: np.ndarray | None = None
    _pos_sets: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _pos_keys: np.ndarray = field(default=None, repr=False)

    # -- factories ----------------------------------------------------------

    @classmethod
    def classification(cls, nodes, classes, num_classes: int, num_nodes: int, is_pseudo=None):
        nodes = np.asarray(nodes, dtype=np.int64)
        classes = np.asarray(classes, dtype=np.int64)
        if nodes.shape != classes.shape or nodes.ndim != 1:
            raise LossError("nodes and classes must be aligned 1-d arrays")
        if np.unique(nodes).size != nodes.size:
            raise LossError("duplicate node in classification supervision")
        if classes.size and (classes.min() < 0 or classes.max() >= num_classes):
            raise LossError(f"class id outside [0, {num_classes})")
        if is_pseudo is None:
            is_pseudo = np.zeros(nodes.size, dtype=bool)
        else:
            is_pseudo = np.asarray(is_pseudo, dtype=bool)
            if is_pseudo.shape != nodes.shape:
                raise LossError("is_pseudo must align with nodes")
        out = cls("classification", num_nodes, nodes=nodes, classes=classes, is_pseudo=is_pseudo)
        out.num_classes = num_classes
        return out

    @classmethod
    def ranking(cls, task: str, graph: Graph, edges=None):
        """Ranking supervision from a training graph.

        ``edges`` defaults to every graph edge; when given, each must exist in
        the graph. Link prediction sources both endpoints (each undirected edge
        yields two oriented positives); recsys orients user -> item only.
        """
        if task not in ("link", "recsys"):
            raise LossError(f"ranking task must be link or recsys, got {task!r}")
        if edges is None:
            edges = graph.edges
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        sets = graph.neighbor_sets()
        for u, v in edges:
            if int(v) not in sets[int(u)]:
                raise LossError(f"positive ({u}, {v}) is not an edge of the supervision graph")
        if task == "recsys":
            if graph.bipartite is None:
                raise LossError("recsys supervision needs a bipartite graph")
            num_users = graph.bipartite[0]
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            pairs = np.stack([lo, hi], axis=1)  # user first
            pool = np.arange(num_users, graph.num_nodes, dtype=np.int64)
        else:
            pairs = np.concatenate([edges, edges[:, ::-1]], axis=0)
            pool = np.arange(graph.num_nodes, dtype=np.int64)
        out = cls(task, graph.num_nodes, positive_pairs=pairs, pool=pool)
        for s, t in pairs:
            out._pos_sets.setdefault(int(s), [])
            out._pos_sets[int(s)].append(int(t))
        out._pos_sets = {s: np.unique(ts) for s, ts in out._pos_sets.items()}
        out._pos_keys = np.unique(pairs[:, 0] * graph.num_nodes + pairs[:, 1])
        return out

    def positives_of(self, source: int) -> np.ndarray:
        return self._pos_sets.get(int(source), np.empty(0, dtype=np.int64))

    @property
    def size(self) -> int:
        if self.task == "classification":
            return int(self.nodes.shape[0])
        return int(self.positive_pairs.shape[0])


def cross_entropy(log_probs: Tensor, supervision: SupervisionSet) -> Tensor:
    """Mean negative log-likelihood over the supervised nodes."""
    if supervision.task != "classification":
        raise LossError("cross_entropy needs classification supervision")
    if supervision.size == 0:
        raise LossError("empty supervision")
    num_classes = log_probs.value.shape[1]
    if supervision.classes.max() >= num_classes:
        raise LossError(
            f"label {int(supervision.classes.max())} >= model classes {num_classes}"
        )
    rows = ad.gather_rows(log_probs, supervision.nodes)
    picked = ad.pick(rows, supervision.classes)
    return ad.scale(ad.mean_all(picked), -1.0)


def bpr_loss(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """Mean softplus(-(pos - neg)): the negative log-sigmoid of the margin."""
    if pos_scores.value.shape != neg_scores.value.shape:
        raise LossError(
            f"score shapes differ: {pos_scores.value.shape} vs {neg_scores.value.shape}"
        )
    if pos_scores.value.size == 0:
        raise LossError("empty score vectors")
    margin = ad.sub(pos_scores, neg_scores)
    return ad.mean_all(ad.softplus(ad.scale(margin, -1.0)))


def l2_regularize(embeddings: Tensor, weight: float) -> Tensor:
    """``weight`` times the mean squared row norm of the embedding matrix."""
    if weight < 0:
        raise LossError(f"weight must be nonnegative, got {weight}")
    n = embeddings.value.shape[0]
    sq = ad.sum_all(ad.hadamard(embeddings, embeddings))
    return ad.scale(sq, weight / n)


def sample_negatives(supervision: SupervisionSet, sources, seed: int) -> np.ndarray:
    """One uniform negative per source, avoiding each source's positives.

    Candidates are the supervision pool (items for recsys, all nodes for link
    prediction) minus the source's linked targets. Deterministic per seed;
    raises if some source is linked to the entire pool.
    """
    if supervision.task == "classification":
        raise LossError("negative sampling applies to ranking supervision")
    sources = np.asarray(sources, dtype=np.int64)
    pool = supervision.pool
    pool_size = pool.shape[0]
    for s in np.unique(sources):
        if supervision.positives_of(s).size >= pool_size:
            raise LossError(f"source {int(s)} is linked to every candidate")

    keys = supervision._pos_keys
    n = supervision.num_nodes
    rng = np.random.default_rng(seed)
    out = np.empty(sources.shape[0], dtype=np.int64)
    pending = np.arange(sources.shape[0])
    for _ in range(64):
        if pending.size == 0:
            return out
        draws = pool[rng.integers(pool_size, size=pending.size)]
        q = sources[pending] * n + draws
        idx = np.minimum(np.searchsorted(keys, q), max(keys.size - 1, 0))
        bad = keys.size > 0
        bad = (keys[idx] == q) if bad else np.zeros(pending.size, dtype=bool)
        out[pending] = draws
        pending = pending[bad]
    # rejection stalled (sources whose positives cover most of the pool):
    # sample the explicit complement, still uniform and seed-deterministic
    for j in pending:
        candidates = np.setdiff1d(pool, supervision.positives_of(sources[j]), assume_unique=True)
        out[j] = candidates[rng.integers(candidates.size)]
    return out
