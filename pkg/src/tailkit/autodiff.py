"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tape`` records every op executed inside its ``with`` block whose inputs
require gradients; ``Tape.backward(loss)`` walks the records in reverse,
accumulating vector-Jacobian products into ``Tensor.grad``. Tensors are rank
<= 2 and float64 throughout; running ops outside any tape computes values only
(cheap inference mode). A tape and its tensors belong to one thread of
execution; nothing here is shared or locked.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "AdamState",
    "AutodiffError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "add_bias",
    "concat_cols",
    "edge_spmm",
    "elu",
    "gather_rows",
    "hadamard",
    "leaky_relu",
    "log_softmax",
    "matmul",
    "mean_all",
    "pick",
    "relu",
    "row_max_pool",
    "row_sum",
    "row_sum_pool",
    "scale",
    "segment_softmax",
    "sigmoid",
    "softplus",
    "spmm",
    "sub",
    "sum_all",
]


class AutodiffError(ValueError):
    """Shape mismatches, rank violations, or tape misuse."""


def _as_value(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise AutodiffError(f"tensors are rank <= 2, got shape {arr.shape}")
    return arr


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = _as_value(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Wengert list of executed ops, in execution (= topological) order."""

    def __init__(self):
        self._records: list[tuple[Tensor, list[tuple[Tensor, Callable]]]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _record(self, out: Tensor, vjps: list[tuple[Tensor, Callable]]) -> None:
        self._records.append((out, vjps))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into every reachable tensor's ``.grad``.

        ``loss`` must be a scalar produced under this tape. Each record is
        visited exactly once, in reverse execution order.
        """
        if not self._records:
            raise AutodiffError("backward called before any op ran under this tape")
        if id(loss) not in self._produced:
            raise AutodiffError("loss tensor was not produced under this tape")
        if loss.value.size != 1:
            raise AutodiffError(f"loss must be scalar, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for out, vjps in reversed(self._records):
            upstream = out.grad
            if upstream is None:
                continue
            for inp, vjp in vjps:
                g = vjp(upstream)
                if g.shape != inp.value.shape:
                    raise AutodiffError(
                        f"vjp produced shape {g.shape} for input of shape {inp.value.shape}"
                    )
                if inp.grad is None:
                    inp.grad = g.copy() if g.base is not None or g is upstream else g
                else:
                    inp.grad = inp.grad + g


def _apply(value: np.ndarray, vjps: list[tuple[Tensor, Callable]]) -> Tensor:
    requires = any(t.requires_grad for t, _ in vjps)
    out = Tensor(value, requires_grad=requires)
    if requires and _TAPE_STACK:
        _TAPE_STACK[-1]._record(out, [(t, f) for t, f in vjps if t.requires_grad])
    return out


def _segment_sum(values: np.ndarray, offsets: np.ndarray, num_segments: int) -> np.ndarray:
    """Sum ``values`` rows into segments delimited by ``offsets`` (empty-safe)."""
    out_shape = (num_segments,) + values.shape[1:]
    if values.shape[0] == 0:
        return np.zeros(out_shape)
    counts = np.diff(offsets)
    nonempty = counts > 0
    starts = offsets[:-1][nonempty]
    out = np.zeros(out_shape)
    out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


# ---------------------------------------------------------------------------
# dense linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise AutodiffError(f"matmul shapes {a.value.shape} x {b.value.shape}")
    return _apply(
        a.value @ b.value,
        [(a, lambda u: u @ b.value.T), (b, lambda u: a.value.T @ u)],
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.value.ndim != 1 or x.value.ndim != 2 or x.value.shape[1] != b.value.shape[0]:
        raise AutodiffError(f"add_bias shapes {x.value.shape} + {b.value.shape}")
    return _apply(
        x.value + b.value[None, :],
        [(x, lambda u: u), (b, lambda u: u.sum(axis=0))],
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise AutodiffError(f"add shapes {a.value.shape} vs {b.value.shape}")
    return _apply(a.value + b.value, [(a, lambda u: u), (b, lambda u: u)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise AutodiffError(f"sub shapes {a.value.shape} vs {b.value.shape}")
    return _apply(a.value - b.value, [(a, lambda u: u), (b, lambda u: -u)])


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise AutodiffError(f"hadamard shapes {a.value.shape} vs {b.value.shape}")
    return _apply(
        a.value * b.value,
        [(a, lambda u: u * b.value), (b, lambda u: u * a.value)],
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _apply(x.value * c, [(x, lambda u: u * c)])


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[0] != b.value.shape[0]:
        raise AutodiffError(f"concat_cols shapes {a.value.shape} | {b.value.shape}")
    ka = a.value.shape[1]
    return _apply(
        np.concatenate([a.value, b.value], axis=1),
        [(a, lambda u: u[:, :ka]), (b, lambda u: u[:, ka:])],
    )


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if x.value.ndim != 2 or idx.ndim != 1:
        raise AutodiffError("gather_rows expects a matrix and a 1-d index array")
    if idx.size and (idx.min() < 0 or idx.max() >= x.value.shape[0]):
        raise AutodiffError("gather_rows index out of range")

    def vjp(u):
        g = np.zeros_like(x.value)
        np.add.at(g, idx, u)
        return g

    return _apply(x.value[idx], [(x, vjp)])


def pick(x: Tensor, cols) -> Tensor:
    """Select one entry per row: out[i] = x[i, cols[i]], shape (n, 1)."""
    cols = np.asarray(cols, dtype=np.int64)
    n = x.value.shape[0]
    if x.value.ndim != 2 or cols.shape != (n,):
        raise AutodiffError("pick expects a matrix and one column index per row")
    if cols.size and (cols.min() < 0 or cols.max() >= x.value.shape[1]):
        raise AutodiffError("pick column index out of range")
    rows = np.arange(n)

    def vjp(u):
        g = np.zeros_like(x.value)
        g[rows, cols] = u[:, 0]
        return g

    return _apply(x.value[rows, cols][:, None], [(x, vjp)])


# ---------------------------------------------------------------------------
# sparse aggregation
# ---------------------------------------------------------------------------

def spmm(adj, x: Tensor) -> Tensor:
    """Sparse-matrix times dense-matrix with constant adjacency weights."""
    if x.value.ndim != 2 or x.value.shape[0] != adj.num_nodes:
        raise AutodiffError(
            f"spmm expects x of shape ({adj.num_nodes}, d), got {x.value.shape}"
        )
    gathered = x.value[adj.targets] * adj.weights[:, None]
    value = _segment_sum(gathered, adj.offsets, adj.num_nodes)

    def vjp(u):
        contrib = u[adj.rows] * adj.weights[:, None]
        return _segment_sum(contrib[adj.t_perm], adj.t_offsets, adj.num_nodes)

    return _apply(value, [(x, vjp)])


def edge_spmm(weights: Tensor, x: Tensor, adj) -> Tensor:
    """Aggregation with per-edge learned weights (shape ``(nnz, 1)``).

    ``adj`` supplies only the support structure (offsets/targets/rows); its
    stored weights are ignored.
    """
    if weights.value.shape != (adj.nnz, 1):
        raise AutodiffError(
            f"edge weights must be ({adj.nnz}, 1), got {weights.value.shape}"
        )
    if x.value.ndim != 2 or x.value.shape[0] != adj.num_nodes:
        raise AutodiffError(
            f"edge_spmm expects x of shape ({adj.num_nodes}, d), got {x.value.shape}"
        )
    w = weights.value[:, 0]
    value = _segment_sum(x.value[adj.targets] * w[:, None], adj.offsets, adj.num_nodes)

    def vjp_w(u):
        return (u[adj.rows] * x.value[adj.targets]).sum(axis=1, keepdims=True)

    def vjp_x(u):
        contrib = u[adj.rows] * w[:, None]
        return _segment_sum(contrib[adj.t_perm], adj.t_offsets, adj.num_nodes)

    return _apply(value, [(weights, vjp_w), (x, vjp_x)])


def segment_softmax(logits: Tensor, offsets: np.ndarray) -> Tensor:
    """Softmax within each contiguous segment of a ``(nnz, 1)`` logit vector."""
    if logits.value.ndim != 2 or logits.value.shape[1] != 1:
        raise AutodiffError(f"segment logits must be (nnz, 1), got {logits.value.shape}")
    v = logits.value[:, 0]
    num_segments = offsets.shape[0] - 1
    counts = np.diff(offsets)
    if counts.sum() != v.shape[0]:
        raise AutodiffError("segment offsets do not cover the logit vector")
    rows = np.repeat(np.arange(num_segments), counts)
    nonempty = counts > 0
    seg_max = np.full(num_segments, -np.inf)
    if v.size:
        seg_max[nonempty] = np.maximum.reduceat(v, offsets[:-1][nonempty])
    shifted = np.exp(v - seg_max[rows])
    denom = _segment_sum(shifted[:, None], offsets, num_segments)[:, 0]
    p = shifted / denom[rows]

    def vjp(u):
        ug = u[:, 0] * p
        dot = _segment_sum(ug[:, None], offsets, num_segments)[:, 0]
        return (ug - p * dot[rows])[:, None]

    return _apply(p[:, None], [(logits, vjp)])


def row_max_pool(x: Tensor, graph) -> Tensor:
    """Per-node elementwise max over neighbor rows; empty neighborhoods give 0.

    Ties route the gradient to the lowest-id neighbor attaining the max.
    """
    if x.value.ndim != 2 or x.value.shape[0] != graph.num_nodes:
        raise AutodiffError(
            f"row_max_pool expects ({graph.num_nodes}, d), got {x.value.shape}"
        )
    n, d = x.value.shape
    off, tgt = graph.csr_offsets, graph.csr_targets
    value = np.zeros((n, d))
    argmax = np.zeros((n, d), dtype=np.int64)
    nonempty = np.zeros(n, dtype=bool)
    for i in range(n):
        a, b = off[i], off[i + 1]
        if b > a:
            seg = x.value[tgt[a:b]]
            am = seg.argmax(axis=0)  # first occurrence = lowest node id (targets sorted)
            value[i] = seg[am, np.arange(d)]
            argmax[i] = tgt[a:b][am]
            nonempty[i] = True

    def vjp(u):
        g = np.zeros_like(x.value)
        cols = np.arange(d)
        for i in np.flatnonzero(nonempty):
            np.add.at(g, (argmax[i], cols), u[i])
        return g

    return _apply(value, [(x, vjp)])


def row_sum_pool(x: Tensor, adj) -> Tensor:
    """Per-node sum over the support rows of ``adj`` (unit weights)."""
    gathered = x.value[adj.targets]
    value = _segment_sum(gathered, adj.offsets, adj.num_nodes)

    def vjp(u):
        return _segment_sum(u[adj.rows][adj.t_perm], adj.t_offsets, adj.num_nodes)

    return _apply(value, [(x, vjp)])


# ---------------------------------------------------------------------------
# nonlinearities and reductions
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _apply(np.where(mask, x.value, 0.0), [(x, lambda u: u * mask)])


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = np.exp(np.minimum(x.value, 0.0)) - 1.0
    value = np.where(x.value > 0, x.value, alpha * neg)
    deriv = np.where(x.value > 0, 1.0, alpha * (neg + 1.0))
    return _apply(value, [(x, lambda u: u * deriv)])


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    deriv = np.where(x.value > 0, 1.0, slope)
    return _apply(x.value * deriv, [(x, lambda u: u * deriv)])


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _apply(s, [(x, lambda u: u * s * (1.0 - s))])


def softplus(x: Tensor) -> Tensor:
    value = np.logaddexp(0.0, x.value)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _apply(value, [(x, lambda u: u * s)])


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax, stabilized by subtracting the row max."""
    if x.value.ndim != 2:
        raise AutodiffError(f"log_softmax expects a matrix, got shape {x.value.shape}")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def vjp(u):
        return u - np.exp(value) * u.sum(axis=1, keepdims=True)

    return _apply(value, [(x, vjp)])


def row_sum(x: Tensor) -> Tensor:
    """Sum across columns, keeping a (n, 1) shape."""
    if x.value.ndim != 2:
        raise AutodiffError(f"row_sum expects a matrix, got shape {x.value.shape}")
    d = x.value.shape[1]
    return _apply(
        x.value.sum(axis=1, keepdims=True),
        [(x, lambda u: np.repeat(u, d, axis=1))],
    )


def sum_all(x: Tensor) -> Tensor:
    return _apply(np.asarray(x.value.sum()), [(x, lambda u: np.broadcast_to(u, x.value.shape).copy())])


def mean_all(x: Tensor) -> Tensor:
    size = x.value.size
    if size == 0:
        raise AutodiffError("mean of an empty tensor")
    return _apply(
        np.asarray(x.value.mean()),
        [(x, lambda u: np.broadcast_to(u / size, x.value.shape).copy())],
    )


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]
        self.t = 0


def adam_step(
    params: list[Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction, in place; missing grads mean zero."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
