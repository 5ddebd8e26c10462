"""Accuracy, full-ranking recall@K, degree buckets, and the evaluation harness.

Ranking is exhaustive: every candidate in the pool is scored, minus only the
source's neighbors in the graph the model actually saw at inference time. Ties
break toward the lower node id so results are reproducible across runs and
platforms. Scoring here bypasses the autodiff tape (frozen parameters, plain
ndarray math) but is kept numerically identical to the training-side scorer.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph
from .models import Model, encode

__all__ = [
    "BUCKET_LABELS",
    "EvalError",
    "MetricReport",
    "accuracy",
    "aggregate_reports",
    "bucket_index",
    "degree_buckets",
    "evaluate_setting",
    "parse_setting",
    "predict_classes",
    "ranking_score_fn",
    "recall_at_k",
    "recall_per_source",
    "validation_metric",
]

_BUCKET_EDGES = (0, 1, 2, 3, 4, 5, 6, 11, 21, 51)
BUCKET_LABELS = ("0", "1", "2", "3", "4", "5", "6-10", "11-20", "21-50", "51+")


class EvalError(ValueError):
    """Invalid evaluation request."""


# ---------------------------------------------------------------------------
# core metrics
# ---------------------------------------------------------------------------

def accuracy(predictions, labels, nodes) -> float:
    """Fraction of ``nodes`` whose prediction equals the label."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise EvalError("accuracy over an empty node set is undefined")
    return float(np.mean(predictions[nodes] == labels[nodes]))


def recall_per_source(score_fn, sources, positives, pool, k=50, exclude=None) -> np.ndarray:
    """Per-source recall@k, in the order of ``sources``.

    ``score_fn(source, candidates)`` returns one score per candidate.
    ``positives`` maps source -> positive target ids; ``exclude`` (optional)
    maps source -> ids dropped from its candidate list before ranking. Ties
    break toward the lower candidate id.
    """
    pool = np.asarray(pool, dtype=np.int64)
    out = np.empty(len(sources), dtype=np.float64)
    for i, source in enumerate(sources):
        source = int(source)
        pos = np.asarray(positives[source], dtype=np.int64)
        if pos.size == 0:
            raise EvalError(f"source {source} has no positives")
        candidates = pool
        if exclude is not None:
            dropped = np.asarray(exclude[source], dtype=np.int64)
            if dropped.size:
                candidates = candidates[~np.isin(candidates, dropped)]
        if candidates.size == 0:
            raise EvalError(f"source {source} has an empty candidate pool")
        scores = np.asarray(score_fn(source, candidates), dtype=np.float64).ravel()
        if scores.shape != candidates.shape:
            raise EvalError(
                f"score function returned {scores.shape}, expected {candidates.shape}"
            )
        # primary key: score descending; secondary: candidate id ascending
        order = np.lexsort((candidates, -scores))
        top = candidates[order[:k]]
        out[i] = np.intersect1d(top, pos, assume_unique=False).size / pos.size
    return out


def recall_at_k(score_fn, sources, positives, pool, k=50, exclude=None) -> float:
    """Mean recall@k over sources (see :func:`recall_per_source`)."""
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size == 0:
        raise EvalError("recall over an empty source set is undefined")
    return float(recall_per_source(score_fn, sources, positives, pool, k, exclude).mean())


def bucket_index(degrees) -> np.ndarray:
    """Bucket id per degree for the fixed bucket edges."""
    degrees = np.asarray(degrees, dtype=np.int64)
    return np.searchsorted(_BUCKET_EDGES, degrees, side="right") - 1


def degree_buckets(graph: Graph, nodes, per_node_metric) -> list[dict]:
    """Mean metric and node count per input-graph degree bucket.

    Buckets are 0,1,2,3,4,5,6-10,11-20,21-50,51+ over the degree each node has
    in ``graph`` (the exact graph the model consumed). All ten rows are always
    present; an unpopulated bucket has count 0 and mean None.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    metric = np.asarray(per_node_metric, dtype=np.float64)
    if metric.shape != nodes.shape:
        raise EvalError(f"metric shape {metric.shape} does not match nodes {nodes.shape}")
    ids = bucket_index(graph.degrees()[nodes])
    rows = []
    for b, label in enumerate(BUCKET_LABELS):
        mask = ids == b
        count = int(mask.sum())
        rows.append(
            {
                "bucket": label,
                "mean": float(metric[mask].mean()) if count else None,
                "count": count,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# report type
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """One evaluated setting: scalar metric, degree-bucket table, provenance."""

    setting: str
    metric_name: str
    value: float
    buckets: list[dict]
    graph_hash: str
    population: int
    num_seeds: int = 1
    std: float = 0.0

    def __post_init__(self) -> None:
        if not -1e-9 <= self.value <= 1 + 1e-9:
            raise EvalError(f"metric {self.value} outside [0, 1]")
        total = sum(row["count"] for row in self.buckets)
        if self.buckets and total != self.population:
            raise EvalError(
                f"bucket counts sum to {total}, expected population {self.population}"
            )

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "metric": self.metric_name,
            "value": self.value,
            "std": self.std,
            "num_seeds": self.num_seeds,
            "population": self.population,
            "graph_hash": self.graph_hash,
            "buckets": self.buckets,
        }

    def csv_rows(self) -> list[tuple[str, float | None, int]]:
        return [(row["bucket"], row["mean"], row["count"]) for row in self.buckets]


def aggregate_reports(reports: list[MetricReport]) -> MetricReport:
    """Mean and standard deviation of one setting's metric across seeds.

    Bucket means average over the seeds where the bucket is populated; counts
    sum. The aggregate keeps the first report's metric name and setting tag.
    """
    if not reports:
        raise EvalError("nothing to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if r.setting != first.setting or r.metric_name != first.metric_name:
            raise EvalError("cannot aggregate mismatched settings")
    values = np.array([r.value for r in reports], dtype=np.float64)
    buckets = []
    for b, label in enumerate(BUCKET_LABELS):
        means = [r.buckets[b]["mean"] for r in reports if r.buckets[b]["mean"] is not None]
        count = sum(r.buckets[b]["count"] for r in reports)
        buckets.append(
            {
                "bucket": label,
                "mean": float(np.mean(means)) if means else None,
                "count": count,
            }
        )
    return MetricReport(
        setting=first.setting,
        metric_name=first.metric_name,
        value=float(values.mean()),
        buckets=buckets,
        graph_hash="aggregate",
        population=sum(r.population for r in reports),
        num_seeds=sum(r.num_seeds for r in reports),
        std=float(values.std()),
    )


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------

_COLD_RE = re.compile(r"^inductive-cold\((\d*\.?\d+)\)$")


def parse_setting(tag: str) -> tuple[str, float | None]:
    """Split a setting tag into (kind, cold ratio)."""
    if tag in ("transductive", "inductive"):
        return tag, None
    m = _COLD_RE.match(tag)
    if m:
        return "inductive-cold", float(m.group(1))
    raise EvalError(f"unknown setting tag {tag!r}")


def predict_classes(model: Model, graph: Graph) -> np.ndarray:
    """Hard class predictions for every node (no tape, parameters untouched)."""
    emb = encode(model, graph)
    logits = emb.value @ model.params["head.weight"].value + model.params["head.bias"].value
    return logits.argmax(axis=1)


def ranking_score_fn(model: Model, embeddings: np.ndarray):
    """A ``(source, candidates) -> scores`` closure over frozen embeddings.

    Plain ndarray replica of the training-side pair scorer (same operations in
    the same order, so the two agree bit for bit).
    """
    if model.task == "link":
        w1 = model.params["head.w1"].value
        b1 = model.params["head.b1"].value
        w2 = model.params["head.w2"].value
        b2 = model.params["head.b2"].value

        def score(source, candidates):
            had = embeddings[source] * embeddings[candidates]
            h = np.maximum(had @ w1 + b1, 0.0)
            return (h @ w2 + b2).ravel()

        return score
    if model.task == "recsys":

        def score(source, candidates):
            return (embeddings[source] * embeddings[candidates]).sum(axis=1)

        return score
    raise EvalError(f"no ranking scorer for task {model.task!r}")


def _positives_from_edges(edges: np.ndarray, both_directions: bool = True) -> dict:
    table: dict[int, list] = {}
    for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        table.setdefault(int(u), []).append(int(v))
        if both_directions:
            table.setdefault(int(v), []).append(int(u))
    return {s: np.unique(t) for s, t in table.items()}


def _neighbor_exclusions(graph: Graph, sources) -> dict:
    return {int(s): graph.neighbors(int(s)) for s in sources}


def evaluate_setting(model: Model, bundle, setting: str, k: int = 50) -> MetricReport:
    """Run the frozen model under one evaluation setting and report metrics.

    The inference graph is rebuilt per the tag: training graph for
    transductive, plus each new node's input edges for inductive, with the
    requested fraction removed for inductive-cold. Parameters are never
    updated (scoring happens outside any tape).
    """
    kind, ratio = parse_setting(setting)
    if bundle.task == "recsys" and kind != "transductive":
        raise EvalError("recsys supports only the transductive setting")
    graph = bundle.inference_graph(kind, ratio)

    if bundle.task == "classification":
        label_set = bundle.label_set
        preds = predict_classes(model, graph)
        population = label_set.unlabeled if kind == "transductive" else bundle.v_new
        population = np.asarray(population, dtype=np.int64)
        if population.size == 0:
            raise EvalError(f"no evaluation nodes for setting {setting!r}")
        correct = (preds[population] == label_set.labels[population]).astype(np.float64)
        return MetricReport(
            setting=setting,
            metric_name="accuracy",
            value=float(correct.mean()),
            buckets=degree_buckets(graph, population, correct),
            graph_hash=graph.edge_hash(),
            population=int(population.size),
        )

    emb = encode(model, graph).value
    score_fn = ranking_score_fn(model, emb)
    if bundle.task == "link":
        if kind == "transductive":
            positives = _positives_from_edges(bundle.trans_test_edges)
            val_sources = set(_positives_from_edges(bundle.trans_val_edges))
            sources = np.array(
                sorted(s for s in positives if s in val_sources), dtype=np.int64
            )
            pool = np.asarray(bundle.v_train, dtype=np.int64)
        else:
            positives = _positives_from_edges(bundle.new_test_edges)
            new = set(bundle.v_new.tolist())
            sources = np.array(sorted(s for s in positives if s in new), dtype=np.int64)
            pool = np.arange(bundle.num_nodes, dtype=np.int64)
    else:  # recsys
        positives = _positives_from_edges(bundle.trans_test_edges, both_directions=False)
        num_users = graph.bipartite[0]
        sources = np.array(sorted(s for s in positives if s < num_users), dtype=np.int64)
        pool = np.arange(num_users, bundle.num_nodes, dtype=np.int64)

    if sources.size == 0:
        raise EvalError(f"no ranking sources for setting {setting!r}")
    exclude = _neighbor_exclusions(graph, sources)
    per_source = recall_per_source(score_fn, sources, positives, pool, k, exclude)
    return MetricReport(
        setting=setting,
        metric_name=f"recall@{k}",
        value=float(per_source.mean()),
        buckets=degree_buckets(graph, sources, per_source),
        graph_hash=graph.edge_hash(),
        population=int(sources.size),
    )


def validation_metric(model: Model, bundle, k: int = 50) -> float:
    """Early-stopping signal on the training graph: validation accuracy for
    classification, validation-edge recall for the ranking tasks."""
    graph = bundle.train_graph
    if bundle.task == "classification":
        preds = predict_classes(model, graph)
        return accuracy(preds, bundle.label_set.labels, bundle.label_set.validation)
    emb = encode(model, graph).value
    score_fn = ranking_score_fn(model, emb)
    if bundle.task == "link":
        positives = _positives_from_edges(bundle.trans_val_edges)
        sources = np.array(sorted(positives), dtype=np.int64)
        pool = np.asarray(bundle.v_train, dtype=np.int64)
    else:
        positives = _positives_from_edges(bundle.trans_val_edges, both_directions=False)
        num_users = graph.bipartite[0]
        sources = np.array(sorted(s for s in positives if s < num_users), dtype=np.int64)
        pool = np.arange(num_users, bundle.num_nodes, dtype=np.int64)
    if sources.size == 0:
        raise EvalError("no validation sources")
    exclude = _neighbor_exclusions(graph, sources)
    return recall_at_k(score_fn, sources, positives, pool, k, exclude)
