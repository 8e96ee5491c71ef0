"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Executing an op while a Tape is active
records a backward closure; Tape.backward (or the free function backward)
replays the closures in reverse execution order and accumulates d(loss)/dT
into each tracked tensor's .grad. Repeated backward calls accumulate until
grads are cleared.

The op set is deliberately small: matmul, add (same shape or a (1, d) row
bias), hadamard, scale, sigmoid, exp, log, relu, elu, per-row sums, segment
softmax/sum over sorted segment ids, row gather, and column concat. Column
reductions are expressed as a segment_sum with a constant zero id vector,
and column-vector broadcasts as a matmul against a constant ones row.
"""

from __future__ import annotations

import threading
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch, UnsortedSegments

_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_state, "tape", None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def add_grad(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of executed ops; inputs always precede their consumers."""

    def __init__(self):
        self._ops: List[Tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active in this worker")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        out.tape = self
        self._ops.append((out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
        loss.add_grad(np.ones_like(loss.data))
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)


def backward(loss: Tensor) -> None:
    """Populate .grad on every tracked tensor the scalar loss depends on."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    if loss.tape is None:
        raise RuntimeError("loss was not produced under an active Tape")
    loss.tape.backward(loss)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    def bw(g):
        if a.requires_grad:
            a.add_grad(g @ b.data.T)
        if b.requires_grad:
            b.add_grad(a.data.T @ g)
    return _make(a.data @ b.data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    row_bias = (
        a.data.ndim == 2 and b.data.ndim == 2
        and b.data.shape == (1, a.data.shape[1]) and a.data.shape[0] != 1
    )
    if not row_bias and a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}")
    def bw(g):
        if a.requires_grad:
            a.add_grad(g)
        if b.requires_grad:
            b.add_grad(g.sum(axis=0, keepdims=True) if row_bias else g)
    return _make(a.data + b.data, (a, b), bw)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"hadamard {a.data.shape} * {b.data.shape}")
    def bw(g):
        if a.requires_grad:
            a.add_grad(g * b.data)
        if b.requires_grad:
            b.add_grad(g * a.data)
    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    def bw(g):
        if a.requires_grad:
            a.add_grad(g * c)
    return _make(a.data * c, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    def bw(g):
        if a.requires_grad:
            a.add_grad(g * s * (1.0 - s))
    return _make(s, (a,), bw)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    def bw(g):
        if a.requires_grad:
            a.add_grad(g * e)
    return _make(e, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.add_grad(g / a.data)
    return _make(np.log(a.data), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    def bw(g):
        if a.requires_grad:
            a.add_grad(g * mask)
    return _make(a.data * mask, (a,), bw)


def elu(a: Tensor) -> Tensor:
    x = a.data
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    def bw(g):
        if a.requires_grad:
            a.add_grad(g * np.where(x > 0, 1.0, neg + 1.0))
    return _make(out, (a,), bw)


def sum_rows(a: Tensor) -> Tensor:
    """Sum within each row: (M, d) -> (M, 1)."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"sum_rows expects a matrix, got {a.data.shape}")
    def bw(g):
        if a.requires_grad:
            a.add_grad(np.broadcast_to(g, a.data.shape).copy())
    return _make(a.data.sum(axis=1, keepdims=True), (a,), bw)


def _check_segments(segment_ids: np.ndarray, n_rows: int) -> np.ndarray:
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.ndim != 1 or len(segment_ids) != n_rows:
        raise ShapeMismatch(f"segment ids {segment_ids.shape} for {n_rows} rows")
    if len(segment_ids) and (segment_ids.min() < 0 or np.any(np.diff(segment_ids) < 0)):
        raise UnsortedSegments("segment ids must be sorted non-decreasing and >= 0")
    return segment_ids


def segment_sum(values: Tensor, segment_ids, num_segments: Optional[int] = None) -> Tensor:
    if values.data.ndim != 2:
        raise ShapeMismatch(f"segment_sum expects a matrix, got {values.data.shape}")
    ids = _check_segments(segment_ids, values.data.shape[0])
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if len(ids) else 0
    out = np.zeros((num_segments, values.data.shape[1]))
    np.add.at(out, ids, values.data)
    def bw(g):
        if values.requires_grad:
            values.add_grad(g[ids])
    return _make(out, (values,), bw)


def segment_softmax(scores: Tensor, segment_ids) -> Tensor:
    """Softmax along axis 0 within each contiguous segment, per column."""
    if scores.data.ndim != 2:
        raise ShapeMismatch(f"segment_softmax expects a matrix, got {scores.data.shape}")
    ids = _check_segments(segment_ids, scores.data.shape[0])
    if len(ids) == 0:
        return _make(scores.data.copy(), (scores,), lambda g: None)
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    counts = np.diff(np.r_[starts, len(ids)])
    seg_max = np.maximum.reduceat(scores.data, starts, axis=0)
    shifted = np.exp(scores.data - np.repeat(seg_max, counts, axis=0))
    denom = np.repeat(np.add.reduceat(shifted, starts, axis=0), counts, axis=0)
    soft = shifted / denom
    def bw(g):
        if scores.requires_grad:
            weighted = soft * g
            seg_dot = np.repeat(np.add.reduceat(weighted, starts, axis=0), counts, axis=0)
            scores.add_grad(weighted - soft * seg_dot)
    return _make(soft, (scores,), bw)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    def bw(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a.add_grad(buf)
    return _make(a.data[idx], (a,), bw)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeMismatch(f"concat_cols {a.data.shape} | {b.data.shape}")
    na = a.data.shape[1]
    def bw(g):
        if a.requires_grad:
            a.add_grad(g[:, :na])
        if b.requires_grad:
            b.add_grad(g[:, na:])
    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), bw)


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


def finite_diff_check(f, inputs: Sequence[Tensor], eps: float = 1e-5,
                      max_coords_per_tensor: Optional[int] = None,
                      seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    f maps the given tensors to a scalar Tensor and must be deterministic.
    Checks every coordinate by default; max_coords_per_tensor caps the number
    checked per tensor (a seeded uniform subset) so large models stay within
    a time budget. Relative error is |analytic - numeric| / max(1, |numeric|).
    Clears and repopulates .grad on the inputs.
    """
    zero_grads(inputs)
    with Tape() as tape:
        out = f(*inputs)
    tape.backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in zip(inputs, analytic):
        flat = tensor.data.reshape(-1)
        size = flat.size
        if max_coords_per_tensor is not None and size > max_coords_per_tensor:
            coords = np.sort(rng.choice(size, size=max_coords_per_tensor, replace=False))
        else:
            coords = range(size)
        gflat = grad.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = float(f(*inputs).data.reshape(-1)[0])
            flat[c] = orig - eps
            f_minus = float(f(*inputs).data.reshape(-1)[0])
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(gflat[c] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
