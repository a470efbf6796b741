"""Reverse-mode autodiff over dense numpy arrays.

Just enough machinery for a transformer encoder: matmul, broadcasting add,
embedding lookup, layer norm, softmax, exact-CDF GELU, inverted dropout, and
a masked cross-entropy loss fused with log-softmax. float32 is the training
dtype; float64 is used for gradient checking.

Ops record onto the innermost active ``Tape``; with no tape active they are
plain numpy computations (the inference fast path). Randomness (dropout) is
injected via an explicit ``numpy.random.Generator`` - there is no hidden
global state anywhere in this module.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import erf

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Dense array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("output", "backward", "forward")

    def __init__(self, output: Tensor, backward: Callable, forward: Callable):
        self.output = output
        self.backward = backward
        self.forward = forward


class Tape:
    """Ordered record of primitive ops for reverse-mode accumulation."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(input) into .grad of every recorded input."""
        root._accumulate(np.ones_like(root.data))
        for rec in reversed(self.records):
            if rec.output.grad is not None:
                rec.backward(rec.output.grad)

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded forward from its saved inputs, in order."""
        return [rec.forward() for rec in self.records]


def _make(data: np.ndarray, inputs: tuple, backward: Callable, forward: Callable) -> Tensor:
    out = Tensor(data)
    tape = Tape.active()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, backward, forward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, lambda: a.data + b.data)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(data, (a,), backward, lambda: a.data * s)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix multiply; trailing two axes are the matrix dims."""
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward, lambda: np.matmul(a.data, b.data))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup; also used to gather hidden states at target positions."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make(data, (table,), backward, lambda: table.data[ids])


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward, lambda: a.data.reshape(shape))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.ascontiguousarray(g.transpose(inv)))

    data = np.ascontiguousarray(a.data.transpose(axes))
    return _make(data, (a,), backward, lambda: np.ascontiguousarray(a.data.transpose(axes)))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    data = gain.data * xhat + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    def forward():
        mu_ = x.data.mean(axis=-1, keepdims=True)
        xc_ = x.data - mu_
        var_ = (xc_ * xc_).mean(axis=-1, keepdims=True)
        return gain.data * (xc_ / np.sqrt(var_ + np.asarray(eps, dtype=x.dtype))) + bias.data

    return _make(data, (x, gain, bias), backward, forward)


def softmax(x: Tensor) -> Tensor:
    """Max-subtracted softmax over the last axis."""

    def compute(arr):
        shifted = arr - arr.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    s = compute(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (x,), backward, lambda: compute(x.data))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""

    def compute(arr):
        return 0.5 * arr * (1.0 + erf(arr * _SQRT1_2))

    data = compute(x.data)

    def backward(g):
        if x.requires_grad:
            phi = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
            x._accumulate(g * (phi + x.data * pdf))

    return _make(data, (x,), backward, lambda: compute(x.data))


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity in eval."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.dtype)
    factor = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    data = x.data * keep * factor

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep * factor)

    return _make(data, (x,), backward, lambda: x.data * keep * factor)


def cross_entropy_masked(logits: Tensor, targets: list[tuple[int, int]]) -> Tensor:
    """Mean of -log softmax(logits)[position, target id] over the targets.

    ``logits`` is (positions, vocab); positions without a target contribute
    nothing. Raises on an empty target list (the mean is undefined).
    """
    if not targets:
        raise ValueError("cross_entropy_masked: no target positions")
    n_pos, n_vocab = logits.data.shape
    pos = np.array([p for p, _ in targets], dtype=np.intp)
    tgt = np.array([t for _, t in targets], dtype=np.intp)
    if pos.size and (pos.min() < 0 or pos.max() >= n_pos):
        raise ValueError("cross_entropy_masked: target position out of range")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= n_vocab):
        raise ValueError("cross_entropy_masked: target id out of range")

    def compute(arr):
        rows = arr[pos]
        m = rows.max(axis=-1, keepdims=True)
        lse = m + np.log(np.exp(rows - m).sum(axis=-1, keepdims=True))
        nll = lse[:, 0] - rows[np.arange(len(pos)), tgt]
        return np.asarray(nll.mean(), dtype=arr.dtype)

    data = compute(logits.data)

    def backward(g):
        if logits.requires_grad:
            rows = logits.data[pos]
            m = rows.max(axis=-1, keepdims=True)
            e = np.exp(rows - m)
            soft = e / e.sum(axis=-1, keepdims=True)
            soft[np.arange(len(pos)), tgt] -= 1.0
            if logits.grad is None:
                logits.grad = np.zeros_like(logits.data)
            np.add.at(logits.grad, pos, soft * (g / len(pos)))

    return _make(data, (logits,), backward, lambda: compute(logits.data))


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax over the last axis (plain numpy)."""
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def grad_check(
    f: Callable[[], Tensor],
    params: list[Tensor],
    eps: float = 1e-5,
    rng: np.random.Generator | None = None,
    min_coords: int = 100,
) -> float:
    """Compare reverse-mode gradients of the scalar ``f()`` against central
    differences on a random subset of at least ``min_coords`` coordinates.

    ``f`` must be deterministic across calls (fix any rng it uses). Returns
    the max relative error |a - n| / max(1, |a|, |n|); raises on non-finite
    values, naming the offending coordinate.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
    if out.data.shape != ():
        raise ValueError("grad_check: f must return a scalar")
    tape.backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > min_coords:
        picks = rng.choice(len(coords), size=min_coords, replace=False)
        coords = [coords[int(k)] for k in picks]

    worst = 0.0
    for pi, flat in coords:
        p = params[pi]
        orig = p.data.flat[flat]
        p.data.flat[flat] = orig + eps
        up = float(f().data)
        p.data.flat[flat] = orig - eps
        down = float(f().data)
        p.data.flat[flat] = orig
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[pi].flat[flat])
        if not (math.isfinite(numeric) and math.isfinite(a)):
            raise ValueError(f"grad_check: non-finite value at param {pi} coord {flat}")
        rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, rel)
    return worst
