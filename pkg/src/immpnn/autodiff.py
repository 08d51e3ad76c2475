"""Minimal reverse-mode autodiff over dense float64 matrices.

Every differentiable op returns a :class:`Tensor` that remembers the op that
produced it. :func:`backward` collects those records into a :class:`Tape`,
ordered by execution sequence, and replays them in reverse. The tape is
rebuilt on every forward pass (define-by-run).
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Graph


class ShapeError(ValueError):
    pass


_seq = itertools.count()
_seq_lock = threading.Lock()


def _next_seq() -> int:
    with _seq_lock:
        return next(_seq)


@dataclass(eq=False)
class Record:
    seq: int
    name: str
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A 2-D float64 array with an optional gradient accumulator."""

    __slots__ = ("values", "requires_grad", "grad", "_record", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        v = np.array(values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {v.shape}")
        self.values = v
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._record: Record | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._record is not None


def _make(values: np.ndarray, name: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = False
    out.grad = None
    out._record = None
    out.name = None
    if any(_needs_grad(t) for t in inputs):
        out._record = Record(_next_seq(), name, tuple(inputs), out, backward_fn)
    return out


# --- ops -------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _make(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add {a.shape} + {b.shape}")
    return _make(a.values + b.values, "add", (a, b), lambda g: (g, g))


def add_row(a: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x c bias row to every row of ``a``."""
    a, bias = _as_tensor(a), _as_tensor(bias)
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row {a.shape} + {bias.shape}")
    return _make(a.values + bias.values, "add_row", (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def scale(a: Tensor, alpha: float) -> Tensor:
    a = _as_tensor(a)
    alpha = float(alpha)
    return _make(alpha * a.values, "scale", (a,), lambda g: (alpha * g,))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0
    return _make(np.where(mask, a.values, 0.0), "relu", (a,), lambda g: (g * mask,))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols rows {a.shape[0]} != {b.shape[0]}")
    k = a.shape[1]
    return _make(
        np.concatenate([a.values, b.values], axis=1), "concat_cols", (a, b), lambda g: (g[:, :k], g[:, k:])
    )


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows ``idx`` (repeats allowed); backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64).ravel()
    n = a.shape[0]
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.values[idx], "gather_rows", (a,), back)


def sparse_apply(M: sp.spmatrix, x: Tensor, name: str = "sparse_apply") -> Tensor:
    """``M @ x`` for a constant sparse ``M``; backward applies ``M.T``."""
    x = _as_tensor(x)
    if M.shape[1] != x.shape[0]:
        raise ShapeError(f"{name}: operator {M.shape} vs rows {x.shape[0]}")
    return _make(np.asarray(M @ x.values), name, (x,), lambda g: (np.asarray(M.T @ g),))


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all entries, as a 1x1 tensor."""
    pred = _as_tensor(pred)
    tv = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    tv = tv.reshape(pred.shape) if tv.size == pred.values.size else tv
    if tv.shape != pred.shape:
        raise ShapeError(f"mse_loss {pred.shape} vs {tv.shape}")
    diff = pred.values - tv
    count = diff.size
    return _make(
        np.array([[np.sum(diff * diff) / count]]),
        "mse_loss",
        (pred,),
        lambda g: (g[0, 0] * 2.0 * diff / count,),
    )


# --- graph operators -----------------------------------------------------

NORM_MODES = ("adjacency", "sym_norm_selfloops", "neg_laplacian")


def graph_operator(g: Graph, norm: str) -> sp.csr_matrix:
    """The symmetric sparse operator used by :func:`spmm` (cached on the graph)."""
    key = ("op", norm)
    if key in g._cache:
        return g._cache[key]
    if norm == "adjacency":
        M = g.adjacency()
    elif norm == "sym_norm_selfloops":
        d = g.degrees.astype(float) + 1.0
        inv = 1.0 / np.sqrt(d)
        M = (sp.diags(inv) @ (g.adjacency() + sp.identity(g.n, format="csr")) @ sp.diags(inv)).tocsr()
    elif norm == "neg_laplacian":
        M = (-g.laplacian()).tocsr()
    else:
        raise ValueError(f"unknown norm {norm!r}; expected one of {NORM_MODES}")
    g._cache[key] = M
    return M


def spmm(g: Graph, norm: str, x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.shape[0] != g.n:
        raise ShapeError(f"spmm: x has {x.shape[0]} rows, graph has {g.n} nodes")
    M = graph_operator(g, norm)
    # all three operators are symmetric, so the adjoint is M itself
    return _make(np.asarray(M @ x.values), f"spmm[{norm}]", (x,), lambda grad: (np.asarray(M @ grad),))


# --- backward --------------------------------------------------------------


class Tape:
    """Records reachable from an output, in execution order."""

    def __init__(self, records: list[Record]):
        self.records = records

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        found: dict[int, Record] = {}
        stack = [out]
        while stack:
            t = stack.pop()
            r = t._record
            if r is None or r.seq in found:
                continue
            found[r.seq] = r
            stack.extend(r.inputs)
        return cls([found[k] for k in sorted(found)])

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, out: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(out): seed}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not _needs_grad(t):
                    continue
                if t._record is not None:
                    key = id(t)
                    grads[key] = grads[key] + gi if key in grads else gi
                if t.requires_grad:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
        # a leaf that is itself the output
        if out.requires_grad and out._record is None:
            out.grad = seed.copy() if out.grad is None else out.grad + seed


def backward(loss: Tensor, upstream: float = 1.0) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    tape = Tape.from_output(loss)
    tape.backward(loss, np.array([[float(upstream)]]))
    return tape


# --- optimizer -------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: list[AdamState],
    lr: float = 3e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params[i].values``."""
    for p, g, st in zip(params, grads, state):
        if g is None:
            g = np.zeros_like(p.values)
        st.t += 1
        st.m = beta1 * st.m + (1 - beta1) * g
        st.v = beta2 * st.v + (1 - beta2) * g * g
        m_hat = st.m / (1 - beta1**st.t)
        v_hat = st.v / (1 - beta2**st.t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = [AdamState(np.zeros_like(p.values), np.zeros_like(p.values)) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_HEADER = "# immpnn-checkpoint v1"


def save_checkpoint(params: dict[str, Tensor], path) -> None:
    """Write ``name,rows,cols,v0,v1,...`` lines (row-major, round-trip exact)."""
    lines = [CHECKPOINT_HEADER]
    for name in sorted(params):
        v = params[name].values
        vals = ",".join(repr(float(x)) for x in v.ravel())
        lines.append(f"{name},{v.shape[0]},{v.shape[1]},{vals}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CHECKPOINT_HEADER:
            raise ValueError(f"{path}: unsupported checkpoint header {header!r}")
        out = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            name, rows, cols, *vals = line.rstrip("\n").split(",")
            rows, cols = int(rows), int(cols)
            if len(vals) != rows * cols:
                raise ValueError(f"{path}:{lineno}: expected {rows * cols} values")
            out[name] = np.array([float(x) for x in vals]).reshape(rows, cols)
    return out
