"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every primitive applied while it is active; ``backward``
replays the records in reverse, accumulating gradients into every tensor
with ``requires_grad``. Tensors built outside a tape are plain values.
All math is float64; there is no broadcasting magic beyond numpy's own.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    EmptySequenceError,
    TapeReuseError,
    VocabularyError,
)

_ACTIVE_TAPE = None


class Tape:
    """Ordered record of primitive applications for one forward graph.

    Use as a context manager; a single backward() pass is allowed per tape.
    """

    def __init__(self):
        self._nodes = []  # (out_tensor, backward_fn) in forward order
        self._spent = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))


def active_tape():
    return _ACTIVE_TAPE


class Tensor:
    """Dense float64 array, optionally participating in gradient taping."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None  # set for tensors produced by a recorded op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def backward(self):
        backward(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    """Add g into t.grad (copying on first touch; g may alias upstream grads)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _result(data, inputs, backward_fn):
    """Create the output tensor and record backward_fn if a tape is active."""
    tape = _ACTIVE_TAPE
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out.tape = tape
        tape._record(out, backward_fn)
    return out


def backward(loss):
    """Populate .grad for every requires_grad tensor reachable from loss."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None:
        raise ContractError("loss was not produced on a live tape")
    if tape._spent:
        raise TapeReuseError("backward already ran on this tape; re-run forward first")
    tape._spent = True
    loss.grad = np.ones((), dtype=np.float64)
    for out, fn in reversed(tape._nodes):
        if out.grad is not None:
            fn(out.grad)


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_data(a, b, op):
    try:
        return op(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"shapes {a.data.shape} and {b.data.shape}: {e}") from e


def add(a, b):
    out_data = _binary_data(a, b, np.add)

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), bwd)


def sub(a, b):
    out_data = _binary_data(a, b, np.subtract)

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, -_unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), bwd)


def mul(a, b):
    out_data = _binary_data(a, b, np.multiply)

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), bwd)


def neg(a):
    def bwd(g):
        _accumulate(a, -g)

    return _result(-a.data, (a,), bwd)


_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def sigmoid(a):
    """Logistic function; output kept strictly inside (0, 1) even where
    float64 would saturate."""
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out_data = np.clip(out_data, _SIGMOID_LO, _SIGMOID_HI)

    def bwd(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _result(out_data, (a,), bwd)


def tanh(a):
    out_data = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _result(out_data, (a,), bwd)


def relu(a):
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0.0))

    return _result(out_data, (a,), bwd)


def exp(a):
    out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _result(out_data, (a,), bwd)


def log(a):
    out_data = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _result(out_data, (a,), bwd)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes through where not clipped."""
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        _accumulate(a, g * ((a.data >= lo) & (a.data <= hi)))

    return _result(out_data, (a,), bwd)


def matmul(a, b):
    """Matrix product. 2-D x 2-D, or stacked with identical leading dims."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {ad.shape} x {bd.shape}")
    if ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul shapes do not agree: {ad.shape} x {bd.shape}")
    out_data = np.matmul(ad, bd)

    def bwd(g):
        _accumulate(a, np.matmul(g, np.swapaxes(bd, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(ad, -1, -2), g))

    return _result(out_data, (a, b), bwd)


def reshape(a, shape):
    orig = a.data.shape
    try:
        out_data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {orig} to {shape}") from e

    def bwd(g):
        _accumulate(a, g.reshape(orig))

    return _result(out_data, (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def bwd(g):
        _accumulate(a, np.transpose(g, inverse))

    return _result(out_data, (a,), bwd)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _result(out_data, tuple(tensors), bwd)


def take(a, key):
    """Static basic slicing (no fancy indexing); backward scatters into zeros."""
    out_data = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _result(out_data, (a,), bwd)


def pad_time(a, before, after):
    """Zero-pad a (B, T, D) tensor along the time axis."""
    if a.data.ndim != 3:
        raise DimensionError(f"pad_time expects (B, T, D), got {a.data.shape}")
    out_data = np.pad(a.data, ((0, 0), (before, after), (0, 0)))
    t = a.data.shape[1]

    def bwd(g):
        _accumulate(a, g[:, before:before + t, :])

    return _result(out_data, (a,), bwd)


def embedding_lookup(table, ids):
    """Gather rows of a (V, d) table; backward scatter-adds (repeats accumulate)."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.data.shape}")
    v = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = ids[(ids < 0) | (ids >= v)].flat[0]
        raise VocabularyError(int(bad), v)
    out_data = table.data[ids]

    def bwd(g):
        if not table.requires_grad:
            return
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.ravel(), g.reshape(-1, table.data.shape[1]))
        _accumulate(table, dt)

    return _result(out_data, (table,), bwd)


def masked_softmax(scores, mask):
    """Softmax over the last axis restricted to mask==True positions.

    Masked positions come out exactly 0; unmasked outputs sum to 1 per row.
    Stabilized by subtracting the per-row max over unmasked entries.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.data.shape)
    if not mask.any(axis=-1).all():
        raise EmptySequenceError("masked_softmax: some row has no unmasked position")
    neg_inf = np.where(mask, scores.data, -np.inf)
    shifted = neg_inf - neg_inf.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(scores, out_data * (g - inner))

    return _result(out_data, (scores,), bwd)


def _check_axis(shape, axis):
    if axis is None:
        return
    if not isinstance(axis, int) or not -len(shape) <= axis < len(shape):
        raise DimensionError(f"axis {axis} invalid for shape {shape}")


def reduce_sum(a, axis=None, keepdims=False):
    _check_axis(a.data.shape, axis)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _result(out_data, (a,), bwd)


def reduce_mean(a, axis=None, keepdims=False):
    _check_axis(a.data.shape, axis)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape) / n)

    return _result(out_data, (a,), bwd)


def max_over_time(a, mask):
    """Max of a (B, T, F) tensor over T, restricted to mask==True steps."""
    if a.data.ndim != 3:
        raise DimensionError(f"max_over_time expects (B, T, F), got {a.data.shape}")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise EmptySequenceError("max_over_time: some row has no unmasked step")
    filled = np.where(mask[:, :, None], a.data, -np.inf)
    arg = filled.argmax(axis=1)  # (B, F)
    out_data = np.take_along_axis(a.data, arg[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, arg[:, None, :], g[:, None, :], axis=1)
        _accumulate(a, full)

    return _result(out_data, (a,), bwd)
