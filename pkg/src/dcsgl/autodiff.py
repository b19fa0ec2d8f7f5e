"""Dense reverse-mode automatic differentiation over 2-D float64 arrays.

Every primitive builds a new :class:`Tensor` holding its parents and a
closure that maps the output gradient to parent gradients. ``backward``
orders the recorded nodes into a :class:`Tape` (reverse topological order)
and visits each node exactly once.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

PROB_FLOOR = 1e-12

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        a = np.asarray(data, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(1, -1)
        elif a.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {a.shape}")
        self.data = a
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.backward_fn: Optional[Callable] = None
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self.shape))

    def __sub__(self, other):
        return sub(self, _lift(other, self.shape))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _lift(v, shape) -> Tensor:
    if isinstance(v, Tensor):
        return v
    return Tensor(np.full(shape, float(v)))


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_ids)
    out.name = ""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1 x cols row vector (bias)."""
    if b.rows == 1 and a.rows != 1 and b.cols == a.cols:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 1 x 1 tensor."""
    shape = a.shape
    return _result(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    s = _softmax(a.data)

    def fn(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _result(s, (a,), fn)


def log_rows(a: Tensor) -> Tensor:
    """Elementwise log with inputs clamped at ``PROB_FLOOR``."""
    x = a.data
    live = x > PROB_FLOOR
    safe = np.where(live, x, PROB_FLOOR)
    return _result(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))


def mean_rows(a: Tensor) -> Tensor:
    n = a.rows
    if n == 0:
        raise ValueError("empty pool")
    return _result(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / n, n, axis=0),))


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    n = a.rows
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    shape = a.shape

    def fn(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), fn)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column mismatch {sorted(cols)}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def fn(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.vstack([p.data for p in parts]), tuple(parts), fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row mismatch {sorted(rows)}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def fn(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.hstack([p.data for p in parts]), tuple(parts), fn)


def spmm(m, a: Tensor, mt=None) -> Tensor:
    """Product of a constant (sparse or dense) matrix with a tensor.

    ``mt`` may supply a precomputed transpose (e.g. ``m`` itself when symmetric).
    """
    if m.shape[1] != a.rows:
        raise ShapeError(f"spmm: shape mismatch {m.shape} @ {a.shape}")
    if mt is None:
        mt = m.T.tocsr() if sp.issparse(m) else m.T
    data = m @ a.data
    return _result(np.asarray(data), (a,), lambda g: (np.asarray(mt @ g),))


def _as_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("kl_categorical: p is not a probability distribution")
    return p


def kl_categorical(p, q_logits: Tensor) -> Tensor:
    """Sum over rows of KL(p_row || softmax(q_logits_row)).

    ``0 * log 0`` is taken as 0 and q is clamped at ``PROB_FLOOR``.
    """
    p = _as_distribution(p)
    if p.shape != q_logits.shape:
        raise ShapeError(f"kl_categorical: shape mismatch {p.shape} vs {q_logits.shape}")
    q = _softmax(q_logits.data)
    live = q > PROB_FLOOR
    qs = np.where(live, q, PROB_FLOOR)
    pos = p > 0
    plogp = np.where(pos, p * np.log(np.where(pos, p, 1.0)), 0.0)
    value = plogp.sum() - (p * np.log(qs)).sum()

    def fn(g):
        gq = np.where(live, -p / qs, 0.0) * g[0, 0]
        return (q * (gq - (gq * q).sum(axis=1, keepdims=True)),)

    return _result(np.array([[value]]), (q_logits,), fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Sum over rows of -log softmax(logits)[label]."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if len(labels) != logits.rows:
        raise ShapeError(f"cross_entropy: {len(labels)} labels for {logits.rows} rows")
    if len(labels) and (labels.min() < 0 or labels.max() >= logits.cols):
        raise ValueError(f"cross_entropy: label out of range for {logits.cols} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(labels))
    value = (lse - z[rows, labels]).sum()

    def fn(g):
        d = np.exp(z - lse[:, None])
        d[rows, labels] -= 1.0
        return (d * g[0, 0],)

    return _result(np.array([[value]]), (logits,), fn)


# ------------------------------------------------------------------ backward


class Tape:
    """Nodes reachable from an output, in topological order."""

    def __init__(self, output: Tensor):
        order: list[Tensor] = []
        seen: set = set()
        stack = [(output, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))
        self.nodes = order

    def __len__(self):
        return len(self.nodes)


def backward(output: Tensor) -> Tape:
    if output.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1 x 1) tensor, got {output.shape}")
    tape = Tape(output)
    grads = {output.node_id: np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    return tape


# ---------------------------------------------------------------- optimizers


def adam_step(
    params: dict,
    grads: dict,
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update of ``params[k]`` for every key in ``grads``.

    ``state`` maps each key to ``(m, v, t)`` and is updated in place, so a
    parameter only advances its own step counter when it receives a gradient.
    """
    for k, g in grads.items():
        p = params[k]
        if p.shape != g.shape:
            raise ShapeError(f"adam_step: {k} has shape {p.shape}, gradient {g.shape}")
        m, v, t = state.get(k, (np.zeros_like(p), np.zeros_like(p), 0))
        t += 1
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
        state[k] = (m, v, t)


def sgd_step(params: dict, grads: dict, state: dict, lr: float, **_) -> None:
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ShapeError(f"sgd_step: {k} has shape {params[k].shape}, gradient {g.shape}")
        params[k] -= lr * g


OPTIMIZERS = {"adam": adam_step, "sgd": sgd_step}
