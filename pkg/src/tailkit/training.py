"""Conventional training, the two-stage tuneup curriculum, and its ablations.

Stage 1 trains on the clean graph. Stage 2 restarts the optimizer and
fine-tunes on a freshly resampled edge-dropped graph at every update,
supervising classification with the stage-1 snapshot's pseudo-labels and the
ranking tasks with the original (un-dropped) edges. Everything is full-batch
and bitwise deterministic for a fixed (config, seed) pair: per-update
randomness (edge drops, negative samples) comes from counter-keyed seed
sequences, never from shared generator state.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape
from .evaluation import predict_classes
from .graph import Graph, LabelSet, drop_edges
from .losses import SupervisionSet, bpr_loss, cross_entropy, l2_regularize, sample_negatives
from .models import TASKS, Model, classify_embeddings, encode, score_pairs

__all__ = [
    "ABLATIONS",
    "ALPHA_GRID",
    "PRESETS",
    "StageReport",
    "TrainConfig",
    "TrainError",
    "TrainReport",
    "pseudo_label",
    "run_ablation",
    "train_base",
    "tuneup",
]

ABLATIONS = ("none", "no-curriculum", "no-pseudo", "no-syntails", "dropedge-only", "base-only")
ALPHA_GRID = (0.25, 0.5, 0.75)


class TrainError(ValueError):
    """Invalid training configuration or inputs."""


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run.

    ``stage2_lr=None`` reuses the stage-1 rate, except recsys which defaults
    to 1e-4 for fine-tuning. The alpha grid searched by the experiment driver
    is :data:`ALPHA_GRID`; any alpha in [0, 1) is accepted here so that
    alpha=0 degenerates to training on the intact graph.
    """

    task: str
    stage1_epochs: int = 300
    stage2_epochs: int = 200
    stage1_lr: float = 0.01
    stage2_lr: float | None = None
    alpha: float = 0.5
    l2_weight: float = 0.0
    eval_every: int = 10
    patience: int = 10
    seed: int = 0
    ablation: str = "none"

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise TrainError(f"unknown task {self.task!r}")
        if self.ablation not in ABLATIONS:
            raise TrainError(f"unknown ablation {self.ablation!r}")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise TrainError("epoch counts must be nonnegative")
        if not 0.0 <= self.alpha < 1.0:
            raise TrainError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.stage1_lr <= 0 or (self.stage2_lr is not None and self.stage2_lr <= 0):
            raise TrainError("learning rates must be positive")
        if self.l2_weight < 0:
            raise TrainError("l2_weight must be nonnegative")
        if self.eval_every < 1 or self.patience < 1:
            raise TrainError("eval_every and patience must be >= 1")

    @property
    def resolved_stage2_lr(self) -> float:
        if self.stage2_lr is not None:
            return self.stage2_lr
        return 1e-4 if self.task == "recsys" else self.stage1_lr

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "stage1_epochs": self.stage1_epochs,
            "stage2_epochs": self.stage2_epochs,
            "stage1_lr": self.stage1_lr,
            "stage2_lr": self.stage2_lr,
            "alpha": self.alpha,
            "l2_weight": self.l2_weight,
            "eval_every": self.eval_every,
            "patience": self.patience,
            "seed": self.seed,
            "ablation": self.ablation,
        }


def _preset(task: str, **kw) -> TrainConfig:
    return TrainConfig(task=task, **kw)


PRESETS = {
    # desk-scale defaults used by the test suite and the bundled benchmarks
    "desk-classification": _preset("classification"),
    "desk-link": _preset("link", stage1_lr=0.01, l2_weight=1e-4),
    "desk-recsys": _preset("recsys", stage1_lr=0.01, stage2_lr=1e-4, l2_weight=1e-4),
    # published full-scale schedules, impractical as test defaults
    "full-classification": _preset(
        "classification", stage1_epochs=1500, stage2_epochs=1500, stage1_lr=0.001
    ),
    "full-link": _preset(
        "link", stage1_epochs=1000, stage2_epochs=1000, stage1_lr=1e-4, l2_weight=1e-4
    ),
    "full-recsys": _preset(
        "recsys", stage1_epochs=2000, stage2_epochs=500,
        stage1_lr=0.001, stage2_lr=1e-4, l2_weight=1e-4,
    ),
}


@dataclass
class StageReport:
    """Trace of one training stage."""

    name: str
    losses: list = field(default_factory=list)
    val_epochs: list = field(default_factory=list)
    val_values: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "losses": self.losses,
            "val_epochs": self.val_epochs,
            "val_values": self.val_values,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
        }


@dataclass
class TrainReport:
    """Full trace of a run: stages, config echo, seed.

    ``wall_clock`` is measured and kept in memory for interactive reporting
    but deliberately left out of the serialized form, which must be identical
    across reruns.
    """

    stages: list
    config: dict
    seed: int
    wall_clock: float = 0.0

    @property
    def stage_boundaries(self) -> list:
        out, total = [], 0
        for stage in self.stages:
            total += stage.epochs_run
            out.append(total)
        return out

    def to_dict(self) -> dict:
        return {
            "stages": [s.to_dict() for s in self.stages],
            "stage_boundaries": self.stage_boundaries,
            "config": self.config,
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# internals
# ---------------------------------------------------------------------------

def _derive_seed(base: int, stage: int, epoch: int, slot: int) -> int:
    seq = np.random.SeedSequence(entropy=base, spawn_key=(stage, epoch, slot))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _task_loss(model: Model, graph: Graph, supervision: SupervisionSet, config, negatives):
    emb = encode(model, graph)
    if config.task == "classification":
        loss = cross_entropy(classify_embeddings(model, emb), supervision)
    else:
        pairs = supervision.positive_pairs
        pos = score_pairs(model, emb, pairs)
        neg_pairs = np.stack([pairs[:, 0], negatives], axis=1)
        neg = score_pairs(model, emb, neg_pairs)
        loss = bpr_loss(pos, neg)
    if config.l2_weight > 0:
        loss = ad.add(loss, l2_regularize(emb, config.l2_weight))
    return loss


def _run_stage(
    model: Model,
    graph: Graph,
    supervision: SupervisionSet,
    config: TrainConfig,
    *,
    name: str,
    stage_index: int,
    epochs: int,
    lr: float,
    mode: str,
    validation_fn=None,
) -> StageReport:
    """One optimization stage; restores the best-validation snapshot at exit.

    ``mode`` picks the per-update forward graph(s): "clean" uses the intact
    graph, "dropped" resamples an edge-dropped copy each update, "both" sums
    the two losses in a single update.
    """
    if supervision.size == 0:
        raise TrainError("supervision is empty")
    report = StageReport(name=name)
    state = AdamState(model.parameters())
    best_val = -np.inf
    best_snapshot = None
    stalled = 0
    for epoch in range(1, epochs + 1):
        graphs = []
        if mode in ("clean", "both"):
            graphs.append(graph)
        if mode in ("dropped", "both"):
            drop_seed = _derive_seed(config.seed, stage_index, epoch, 0)
            graphs.append(drop_edges(graph, config.alpha, seed=drop_seed))
        negatives = None
        if config.task != "classification":
            neg_seed = _derive_seed(config.seed, stage_index, epoch, 1)
            negatives = sample_negatives(supervision, supervision.positive_pairs[:, 0], neg_seed)

        model.zero_grad()
        with Tape() as tape:
            loss = _task_loss(model, graphs[0], supervision, config, negatives)
            for extra in graphs[1:]:
                loss = ad.add(loss, _task_loss(model, extra, supervision, config, negatives))
            tape.backward(loss)
        ad.adam_step(model.parameters(), state, lr)
        report.losses.append(float(loss.value))
        report.epochs_run = epoch

        if validation_fn is not None and (epoch % config.eval_every == 0 or epoch == epochs):
            value = float(validation_fn(model))
            report.val_epochs.append(epoch)
            report.val_values.append(value)
            if value > best_val:
                best_val = value
                best_snapshot = model.copy_values()
                report.best_epoch = epoch
                stalled = 0
            else:
                stalled += 1
                if stalled >= config.patience:
                    break

    if best_snapshot is not None:
        model.load_values(best_snapshot)
    else:
        report.best_epoch = report.epochs_run
    return report


def _check_inputs(model: Model, supervision: SupervisionSet, config: TrainConfig) -> None:
    if model.task != config.task:
        raise TrainError(f"model task {model.task!r} != config task {config.task!r}")
    if supervision.task != config.task:
        raise TrainError(
            f"supervision task {supervision.task!r} != config task {config.task!r}"
        )
    if supervision.size == 0:
        raise TrainError("supervision is empty")


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def train_base(
    model: Model,
    graph: Graph,
    supervision: SupervisionSet,
    config: TrainConfig,
    validation_fn=None,
) -> tuple[Model, TrainReport]:
    """Conventional full-batch training on the intact graph (stage 1 alone)."""
    _check_inputs(model, supervision, config)
    start = time.perf_counter()
    stage = _run_stage(
        model, graph, supervision, config,
        name="base", stage_index=0, epochs=config.stage1_epochs,
        lr=config.stage1_lr, mode="clean", validation_fn=validation_fn,
    )
    report = TrainReport(
        [stage], config.to_dict(), config.seed, wall_clock=time.perf_counter() - start
    )
    return model, report


def pseudo_label(model: Model, graph: Graph, label_set: LabelSet) -> SupervisionSet:
    """Augment training supervision with model-predicted classes.

    The frozen model predicts on the intact graph; every unlabeled node that
    has at least one edge receives its argmax class, flagged as pseudo.
    Labeled training nodes keep their observed classes; isolated unlabeled
    nodes stay out (an edgeless node gives the encoder nothing to read).
    """
    if model.task != "classification":
        raise TrainError(f"pseudo_label needs a classification model, got {model.task!r}")
    if label_set.train_labeled is None or label_set.unlabeled is None:
        raise TrainError("label set is missing its split index arrays")
    preds = predict_classes(model, graph)
    degrees = graph.degrees()
    unlabeled = np.asarray(label_set.unlabeled, dtype=np.int64)
    targets = unlabeled[degrees[unlabeled] >= 1]
    train = np.asarray(label_set.train_labeled, dtype=np.int64)
    nodes = np.concatenate([train, targets])
    classes = np.concatenate([label_set.labels[train], preds[targets]])
    flags = np.concatenate(
        [np.zeros(train.size, dtype=bool), np.ones(targets.size, dtype=bool)]
    )
    return SupervisionSet.classification(
        nodes, classes, label_set.num_classes, label_set.num_nodes, is_pseudo=flags
    )


def tuneup(
    model: Model,
    graph: Graph,
    supervision: SupervisionSet,
    config: TrainConfig,
    *,
    label_set: LabelSet | None = None,
    validation_fn=None,
) -> tuple[Model, TrainReport]:
    """Run the training strategy selected by ``config.ablation``.

    The default tag "none" is the full curriculum: conventional stage 1, then
    pseudo-labels from the stage-1 snapshot (classification), then a second
    stage over per-update edge-dropped graphs with a fresh optimizer.
    """
    _check_inputs(model, supervision, config)
    tag = config.ablation
    start = time.perf_counter()

    if tag == "base-only":
        return train_base(model, graph, supervision, config, validation_fn)

    if tag in ("no-curriculum", "dropedge-only"):
        mode = "both" if tag == "no-curriculum" else "dropped"
        stage = _run_stage(
            model, graph, supervision, config,
            name=tag, stage_index=0, epochs=config.stage1_epochs,
            lr=config.stage1_lr, mode=mode, validation_fn=validation_fn,
        )
        report = TrainReport(
            [stage], config.to_dict(), config.seed, wall_clock=time.perf_counter() - start
        )
        return model, report

    # curriculum family: none, no-pseudo, no-syntails
    stage1 = _run_stage(
        model, graph, supervision, config,
        name="base", stage_index=0, epochs=config.stage1_epochs,
        lr=config.stage1_lr, mode="clean", validation_fn=validation_fn,
    )
    stage2_supervision = supervision
    if config.task == "classification" and tag != "no-pseudo":
        if label_set is None:
            raise TrainError("the curriculum needs a label_set to produce pseudo-labels")
        stage2_supervision = pseudo_label(model, graph, label_set)
    stage2 = _run_stage(
        model, graph, stage2_supervision, config,
        name="finetune", stage_index=1, epochs=config.stage2_epochs,
        lr=config.resolved_stage2_lr,
        mode="clean" if tag == "no-syntails" else "dropped",
        validation_fn=validation_fn,
    )
    report = TrainReport(
        [stage1, stage2], config.to_dict(), config.seed,
        wall_clock=time.perf_counter() - start,
    )
    return model, report


def run_ablation(
    tag: str,
    model: Model,
    graph: Graph,
    supervision: SupervisionSet,
    config: TrainConfig,
    *,
    label_set: LabelSet | None = None,
    validation_fn=None,
) -> tuple[Model, TrainReport]:
    """:func:`tuneup` with the strategy tag overriding the config's."""
    if tag not in ABLATIONS:
        raise TrainError(f"unknown ablation {tag!r}")
    return tuneup(
        model, graph, supervision, replace(config, ablation=tag),
        label_set=label_set, validation_fn=validation_fn,
    )
