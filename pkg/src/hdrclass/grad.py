"""Small reverse-mode differentiation engine over numpy arrays.

Only the operations the header classifier needs are provided. A :class:`Tape`
records every operation whose inputs require gradients; :meth:`Tape.backward`
walks the record in reverse once and accumulates gradients into the
registered parameters.

Tensors may carry leading batch dimensions; the matrix-shaped rules in the
docstrings apply to the trailing axes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

PROB_FLOOR = 1e-12


class ShapeMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class GraphConsumed(RuntimeError):
    pass


class Tensor:
    """An ndarray plus the bookkeeping needed for backpropagation."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value, tape: Tape | None = None, name: str | None = None, check: bool = True):
        value = np.asarray(value, dtype=np.float64)
        if check and not np.all(np.isfinite(value)):
            raise ValueError("tensor values must be finite")
        self.value = value
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Records operations for one forward pass and replays them backwards."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, Tensor] = {}
        self.consumed = False

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, tape=self, name=name, check=False)
        self.params[name] = t
        return t

    def _record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        if self.consumed:
            raise GraphConsumed("tape already consumed by backward()")
        out.tape = self
        self.nodes.append(_Node(out, inputs, vjp))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Back-propagate from a scalar ``loss``; returns gradients by parameter name."""
        if self.consumed:
            raise GraphConsumed("backward() may only run once per recorded graph")
        if loss.value.size != 1:
            raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        for t in self.params.values():
            t.grad = np.zeros_like(t.value)
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or inp.tape is None:
                    continue
                if inp.grad is None:
                    inp.grad = gi.copy()
                else:
                    inp.grad += gi
        return {name: t.grad for name, t in self.params.items()}


def constant(value) -> Tensor:
    return Tensor(value)


def _tape_of(*ts: Tensor) -> Tape | None:
    for t in ts:
        if t.tape is not None:
            return t.tape
    return None


def _emit(value: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor(value, check=False)
    tape = _tape_of(*inputs)
    if tape is not None:
        tape._record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes that numpy broadcasting added or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` over the last two axes; backward dA = dC Bᵀ, dB = Aᵀ dC."""
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        if bv.ndim == 2:
            # batched a against a shared matrix: fold batch into rows
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return _unbroadcast(ga, av.shape), gb

    return _emit(av @ bv, (a, b), vjp)


def transpose(t: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _emit(np.swapaxes(t.value, -1, -2), (t,), lambda g: (np.swapaxes(g, -1, -2),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (covers the broadcast-add case)."""
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _emit(value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def scalar_div(t: Tensor, c: float) -> Tensor:
    return _emit(t.value / c, (t,), lambda g: (g / c,))


def total(t: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    shape = t.shape
    return _emit(np.asarray(t.value.sum()), (t,), lambda g: (np.broadcast_to(g, shape).copy(),))


def lookup_rows(table: Tensor, indices) -> Tensor:
    """Row gather ``table[indices]``; identical to one-hot(indices) @ table."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(f"row index out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def vjp(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, *shape[1:]))
        return (gt,)

    return _emit(table.value[idx], (table,), vjp)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if t.value.size == 0:
        raise ShapeMismatch("softmax of an empty tensor")
    z = t.value - t.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit(p, (t,), vjp)


def softmax_rows(t: Tensor) -> Tensor:
    return softmax(t, axis=-1)


def softmax_cols(t: Tensor) -> Tensor:
    return softmax(t, axis=-2)


def row_l1_normalize(t: Tensor, axis: int = -1) -> Tensor:
    """Divide each slice along ``axis`` by its sum (inputs are assumed positive)."""
    x = t.value
    s = x.sum(axis=axis, keepdims=True)
    y = x / s

    def vjp(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) / s,)

    return _emit(y, (t,), vjp)


def relu(t: Tensor) -> Tensor:
    mask = t.value > 0
    return _emit(np.where(mask, t.value, 0.0), (t,), lambda g: (g * mask,))


def max_pool(t: Tensor, axis: int) -> Tensor:
    """Max over ``axis``; the gradient flows to the first maximal entry."""
    x = t.value
    arg = np.expand_dims(np.argmax(x, axis=axis), axis)
    value = np.take_along_axis(x, arg, axis=axis).squeeze(axis)

    def vjp(g):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _emit(value, (t,), vjp)


def dropout(t: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) while training, identity otherwise."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return t
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = (rng.random(t.shape) >= p) / (1.0 - p)
    return _emit(t.value * mask, (t,), lambda g: (g * mask,))


def conv1d_valid(x: Tensor, kernels: Tensor) -> Tensor:
    """Valid 1D convolution along the length axis.

    ``x`` is (..., N, D) and ``kernels`` is (L, D, Q). Each window of Q
    consecutive rows, viewed as a D x Q block, is multiplied elementwise by a
    kernel and summed, giving an output of shape (..., N - Q + 1, L).
    """
    n, d = x.shape[-2:]
    n_k, dk, q = kernels.shape
    if dk != d or q > n:
        raise ShapeMismatch(f"conv1d input {x.shape} vs kernels {kernels.shape}")
    xv, kv = x.value, kernels.value
    # (..., U, D, Q): window u, feature d, tap j == x[..., u + j, d]
    win = np.lib.stride_tricks.sliding_window_view(xv, q, axis=-2)
    u = n - q + 1
    out = np.einsum("...udq,ldq->...ul", win, kv, optimize=True)

    def vjp(g):
        gk = np.einsum("...udq,...ul->ldq", win, g, optimize=True)
        gwin = np.einsum("...ul,ldq->...udq", g, kv, optimize=True)
        gx = np.zeros_like(xv)
        for j in range(q):
            gx[..., j : j + u, :] += gwin[..., j]
        return gx, gk

    return _emit(out, (x, kernels), vjp)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log p[label] over the batch, probabilities floored at 1e-12."""
    p = probs.value
    y = np.asarray(labels, dtype=np.intp)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ShapeMismatch(f"cross_entropy probs {p.shape} vs labels {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {p.shape[1]})")
    b = p.shape[0]
    rows = np.arange(b)
    picked = p[rows, y]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = -np.log(clamped).mean()

    def vjp(g):
        gp = np.zeros_like(p)
        gp[rows, y] = np.where(picked > PROB_FLOOR, -g / (b * clamped), 0.0)
        return (gp,)

    return _emit(np.asarray(loss), (probs,), vjp)
