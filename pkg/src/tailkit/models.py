"""Encoders and task heads built on the tape engine.

Five encoder variants share one weights-per-layer layout: ``gcn`` applies the
symmetric renormalized adjacency; the ``sage-*`` variants concatenate each
node's own representation with a neighbor aggregate (mean, elementwise max, or
sum) before the linear transform; ``gat`` learns single-head attention over
each node's neighborhood plus itself (LeakyReLU slope 0.2, coefficients
normalized to sum to 1). ReLU sits between layers, never after the last.

Heads: a linear + log-softmax classifier, a two-layer MLP link scorer on the
Hadamard product of endpoint embeddings (hidden width = embedding width), and
an inner-product scorer for user-item graphs. Featureless graphs get a
trainable shallow embedding table as encoder input.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, GraphError, normalize_adjacency

__all__ = [
    "EncoderConfig",
    "Model",
    "ModelError",
    "TASKS",
    "VARIANTS",
    "classify",
    "classify_embeddings",
    "encode",
    "init_model",
    "link_score",
    "load_model",
    "recsys_score",
    "save_model",
    "score_pairs",
]

VARIANTS = ("gcn", "sage-mean", "sage-max", "sage-sum", "gat")
TASKS = ("classification", "link", "recsys")


class ModelError(ValueError):
    """Invalid model configuration or misuse of a task head."""


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the message-passing encoder."""

    variant: str
    input_dim: int
    hidden_dim: int
    output_dim: int
    num_layers: int = 3
    gat_heads: int = 1

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ModelError("all dimensions must be >= 1")
        if self.num_layers < 1:
            raise ModelError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.gat_heads != 1:
            raise ModelError("only single-head attention is supported")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * (self.num_layers - 1) + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class Model:
    """Parameter container for an encoder plus one task head."""

    config: EncoderConfig
    task: str
    params: dict[str, Tensor]
    num_classes: int | None = None

    def parameters(self) -> list[Tensor]:
        """Trainable tensors in deterministic (sorted-name) order."""
        return [self.params[k] for k in sorted(self.params)]

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.value[...] = values[k]

    @property
    def has_embedding_table(self) -> bool:
        return "embed.table" in self.params

    def param_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].value).tobytes())
        return h.hexdigest()[:16]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(
    config: EncoderConfig,
    task: str,
    *,
    num_classes: int | None = None,
    num_nodes: int | None = None,
    featureless: bool = False,
    seed: int = 0,
) -> Model:
    """Glorot-initialized model; biases start at zero.

    ``featureless=True`` adds a shallow embedding table of shape
    ``(num_nodes, input_dim)`` used as encoder input (the usual setup for
    user-item graphs without node features).
    """
    if task not in TASKS:
        raise ModelError(f"unknown task {task!r}, expected one of {TASKS}")
    if task == "classification" and (num_classes is None or num_classes < 2):
        raise ModelError("classification needs num_classes >= 2")
    if featureless and (num_nodes is None or num_nodes < 1):
        raise ModelError("a shallow embedding table needs num_nodes")

    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for layer, (d_in, d_out) in enumerate(config.layer_dims()):
        w_in = 2 * d_in if config.variant.startswith("sage") else d_in
        params[f"enc{layer}.weight"] = Tensor(
            _glorot(rng, w_in, d_out, (w_in, d_out)), requires_grad=True
        )
        params[f"enc{layer}.bias"] = Tensor(np.zeros(d_out), requires_grad=True)
        if config.variant == "gat":
            params[f"enc{layer}.att_src"] = Tensor(
                _glorot(rng, d_out, 1, (d_out, 1)), requires_grad=True
            )
            params[f"enc{layer}.att_dst"] = Tensor(
                _glorot(rng, d_out, 1, (d_out, 1)), requires_grad=True
            )

    d = config.output_dim
    if task == "classification":
        params["head.weight"] = Tensor(_glorot(rng, d, num_classes, (d, num_classes)), requires_grad=True)
        params["head.bias"] = Tensor(np.zeros(num_classes), requires_grad=True)
    elif task == "link":
        params["head.w1"] = Tensor(_glorot(rng, d, d, (d, d)), requires_grad=True)
        params["head.b1"] = Tensor(np.zeros(d), requires_grad=True)
        params["head.w2"] = Tensor(_glorot(rng, d, 1, (d, 1)), requires_grad=True)
        params["head.b2"] = Tensor(np.zeros(1), requires_grad=True)
    # recsys scores by inner product: no head parameters

    if featureless:
        params["embed.table"] = Tensor(
            0.1 * rng.standard_normal((num_nodes, config.input_dim)), requires_grad=True
        )
    return Model(config, task, params, num_classes)


def _encoder_input(model: Model, graph: Graph) -> Tensor:
    if model.has_embedding_table:
        table = model.params["embed.table"]
        if table.value.shape[0] != graph.num_nodes:
            raise ModelError(
                f"embedding table has {table.value.shape[0]} rows, graph has {graph.num_nodes} nodes"
            )
        return table
    if graph.features is None:
        raise ModelError("graph has no features and the model has no embedding table")
    if graph.features.shape[1] != model.config.input_dim:
        raise ModelError(
            f"feature dim {graph.features.shape[1]} != input_dim {model.config.input_dim}"
        )
    return Tensor(graph.features)


def encode(model: Model, graph: Graph, *, return_attention: bool = False):
    """Run the encoder; returns node embeddings of shape (num_nodes, output_dim).

    With ``return_attention=True`` (gat only) also returns the per-layer
    attention coefficient arrays aligned with the self-looped support.
    """
    cfg = model.config
    h = _encoder_input(model, graph)
    variant = cfg.variant
    adj = None
    if variant in ("gcn", "gat"):
        adj = normalize_adjacency(graph, "renormalized")  # gat uses the support only
    elif variant == "sage-mean":
        adj = normalize_adjacency(graph, "row-mean")
    elif variant == "sage-sum":
        adj = normalize_adjacency(graph, "none")

    attention: list[np.ndarray] = []
    for layer in range(cfg.num_layers):
        w = model.params[f"enc{layer}.weight"]
        b = model.params[f"enc{layer}.bias"]
        if variant == "gcn":
            h = ad.add_bias(ad.spmm(adj, ad.matmul(h, w)), b)
        elif variant == "gat":
            wh = ad.matmul(h, w)
            e_src = ad.matmul(wh, model.params[f"enc{layer}.att_src"])
            e_dst = ad.matmul(wh, model.params[f"enc{layer}.att_dst"])
            logits = ad.leaky_relu(
                ad.add(ad.gather_rows(e_src, adj.rows), ad.gather_rows(e_dst, adj.targets)),
                0.2,
            )
            coeff = ad.segment_softmax(logits, adj.offsets)
            if return_attention:
                attention.append(coeff.value.copy())
            h = ad.add_bias(ad.edge_spmm(coeff, wh, adj), b)
        else:
            if variant == "sage-max":
                agg = ad.row_max_pool(h, graph)
            else:
                agg = ad.spmm(adj, h)
            h = ad.add_bias(ad.matmul(ad.concat_cols(h, agg), w), b)
        if layer < cfg.num_layers - 1:
            h = ad.relu(h)
    if return_attention:
        return h, attention
    return h


def classify_embeddings(model: Model, embeddings: Tensor) -> Tensor:
    """Log class probabilities from precomputed embeddings, shape (n, classes)."""
    if model.task != "classification":
        raise ModelError(f"classify called on a {model.task} model")
    logits = ad.add_bias(
        ad.matmul(embeddings, model.params["head.weight"]), model.params["head.bias"]
    )
    return ad.log_softmax(logits)


def classify(model: Model, graph: Graph) -> Tensor:
    """Log class probabilities for every node, shape (num_nodes, num_classes)."""
    return classify_embeddings(model, encode(model, graph))


def score_pairs(model: Model, embeddings: Tensor, pairs: np.ndarray, *, graph: Graph | None = None) -> Tensor:
    """Scores for (source, target) rows given precomputed embeddings, shape (P, 1)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    zs = ad.gather_rows(embeddings, pairs[:, 0])
    zt = ad.gather_rows(embeddings, pairs[:, 1])
    had = ad.hadamard(zs, zt)
    if model.task == "link":
        h = ad.relu(ad.add_bias(ad.matmul(had, model.params["head.w1"]), model.params["head.b1"]))
        return ad.add_bias(ad.matmul(h, model.params["head.w2"]), model.params["head.b2"])
    if model.task == "recsys":
        if graph is not None:
            _check_user_item(graph, pairs)
        return ad.row_sum(had)
    raise ModelError(f"score_pairs called on a {model.task} model")


def _check_user_item(graph: Graph, pairs: np.ndarray) -> None:
    if graph.bipartite is None:
        raise ModelError("recsys scoring needs a bipartite graph")
    num_users = graph.bipartite[0]
    if pairs.size and not (
        (pairs[:, 0] < num_users).all() and (pairs[:, 1] >= num_users).all()
    ):
        raise ModelError("recsys pairs must be (user, item) with item ids offset by num_users")


def link_score(model: Model, graph: Graph, pairs) -> Tensor:
    """MLP score on the Hadamard product of the two endpoint embeddings."""
    if model.task != "link":
        raise ModelError(f"link_score called on a {model.task} model")
    return score_pairs(model, encode(model, graph), pairs)


def recsys_score(model: Model, graph: Graph, pairs) -> Tensor:
    """Inner-product score for (user, item) pairs."""
    if model.task != "recsys":
        raise ModelError(f"recsys_score called on a {model.task} model")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    _check_user_item(graph, pairs)
    return score_pairs(model, encode(model, graph), pairs, graph=graph)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1


def save_model(model: Model, path) -> None:
    """Write a versioned JSON checkpoint; float64 values round-trip exactly."""
    payload = {
        "format_version": FORMAT_VERSION,
        "task": model.task,
        "num_classes": model.num_classes,
        "config": {
            "variant": model.config.variant,
            "input_dim": model.config.input_dim,
            "hidden_dim": model.config.hidden_dim,
            "output_dim": model.config.output_dim,
            "num_layers": model.config.num_layers,
            "gat_heads": model.config.gat_heads,
        },
        "params": {
            k: {
                "shape": list(p.value.shape),
                "data": base64.b64encode(
                    np.ascontiguousarray(p.value, dtype="<f8").tobytes()
                ).decode("ascii"),
            }
            for k, p in sorted(model.params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelError(f"unsupported checkpoint version {version!r}")
    config = EncoderConfig(**payload["config"])
    params = {}
    for k, entry in payload["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
        params[k] = Tensor(arr, requires_grad=True)
    return Model(config, payload["task"], params, payload.get("num_classes"))
