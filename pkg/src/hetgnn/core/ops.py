"""Differentiable array ops.

Every op accepts plain numpy arrays or `Var`s. With no `Var` among its
inputs an op returns a plain array and records nothing, which is how the
graph exchange ops run outside of training.
"""

from typing import Optional, Sequence

import numpy as np

from hetgnn.core.tape import TapeError, Var, value_of

REDUCE_TYPES = ("sum", "mean", "max", "min")


class DimensionError(ValueError):
    pass


def _tape_of(inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("inputs were recorded on different tapes")
    return tape


def _emit(value, inputs, vjp):
    tape = _tape_of(inputs)
    if tape is None:
        return value
    parents = [x if isinstance(x, Var) else None for x in inputs]
    return tape.record(value, parents, vjp)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_ids(ids, limit, what):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError(f"{what} must be rank 1, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= limit):
        bad = ids[(ids < 0) | (ids >= limit)][0]
        raise IndexError(f"{what} out of range: {bad} not in [0, {limit})")
    return ids


# Elementwise arithmetic ---------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _emit(out, (a, b), lambda g: (_unbroadcast(g / bv, av.shape),
                                          _unbroadcast(-g * av / (bv * bv), bv.shape)))


def square(x):
    xv = value_of(x)
    return _emit(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def exp(x):
    out = np.exp(value_of(x))
    return _emit(out, (x,), lambda g: (g * out,))


def log(x):
    xv = value_of(x)
    return _emit(np.log(xv), (x,), lambda g: (g / xv,))


def reduce_sum(x, axis=None):
    xv = value_of(x)
    out = np.sum(xv, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return _emit(np.asarray(out), (x,), vjp)


def reduce_mean(x, axis=None):
    xv = value_of(x)
    count = xv.size if axis is None else xv.shape[axis]
    return mul(reduce_sum(x, axis), 1.0 / max(count, 1))


def reshape(x, shape):
    xv = value_of(x)
    return _emit(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def slice_last(x, start: int, stop: int):
    """Columns [start, stop) along the last axis."""
    xv = value_of(x)

    def vjp(g):
        full = np.zeros_like(xv)
        full[..., start:stop] = g
        return (full,)

    return _emit(xv[..., start:stop].copy(), (x,), vjp)


# Dense layers -------------------------------------------------------------

def linear(x, w, b=None):
    """y = x @ w (+ b)."""
    xv, wv = value_of(x), value_of(w)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise DimensionError(f"linear: cannot multiply x{list(xv.shape)} by W{list(wv.shape)}")
    out = xv @ wv
    if b is None:
        return _emit(out, (x, w), lambda g: (g @ wv.T, xv.T @ g))
    bv = value_of(b)
    if bv.shape != (wv.shape[1],):
        raise DimensionError(f"linear: bias{list(bv.shape)} does not match W{list(wv.shape)}")
    out = out + bv
    return _emit(out, (x, w, b), lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


def activation(x, kind: str = "identity", alpha: float = 0.2):
    xv = value_of(x)
    if kind in ("identity", "linear", None):
        return x
    if kind == "relu":
        mask = xv > 0
        # np.maximum keeps NaN visible so divergence is caught downstream.
        return _emit(np.maximum(xv, 0).astype(xv.dtype), (x,), lambda g: (g * mask,))
    if kind == "leaky_relu":
        slope = np.where(xv > 0, 1.0, alpha).astype(xv.dtype)
        return _emit(xv * slope, (x,), lambda g: (g * slope,))
    if kind == "sigmoid":
        out = _sigmoid(xv)
        return _emit(out, (x,), lambda g: (g * out * (1 - out),))
    if kind == "tanh":
        out = np.tanh(xv)
        return _emit(out, (x,), lambda g: (g * (1 - out * out),))
    if kind == "log1p":
        return _emit(np.log1p(xv), (x,), lambda g: (g / (1.0 + xv),))
    raise ValueError(f"unknown activation {kind!r}")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def concat_last(parts: Sequence):
    if not parts:
        raise DimensionError("concat_last needs at least one part")
    values = [value_of(p) for p in parts]
    rows = {v.shape[0] for v in values}
    if any(v.ndim != 2 for v in values) or len(rows) != 1:
        raise DimensionError(f"concat_last: row counts differ: {[list(v.shape) for v in values]}")
    out = np.concatenate(values, axis=-1)
    bounds = np.cumsum([0] + [v.shape[-1] for v in values])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(values)))

    return _emit(out, tuple(parts), vjp)


# Index-driven kernels -----------------------------------------------------

def gather_rows(values, indices):
    vv = value_of(values)
    idx = _check_ids(indices, vv.shape[0], "gather index")
    out = vv[idx]

    def vjp(g):
        return (_scatter_sum(g, idx, vv.shape[0]).astype(vv.dtype),)

    return _emit(out, (values,), vjp)


def _scatter_sum(values, ids, n):
    out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, ids, values)
    return out


def segment_reduce(values, segment_ids, num_segments: int, reduce_type: str = "sum"):
    """Reduces rows of `values` into `num_segments` rows; empty segments give 0.

    Sums accumulate in float64 and are cast back to the input dtype.
    """
    vv = value_of(values)
    if reduce_type not in REDUCE_TYPES:
        raise ValueError(f"unknown reduce_type {reduce_type!r}; expected one of {REDUCE_TYPES}")
    ids = _check_ids(segment_ids, num_segments, "segment id")
    if ids.shape[0] != vv.shape[0]:
        raise DimensionError(f"{ids.shape[0]} segment ids for {vv.shape[0]} rows")
    trail = vv.shape[1:]

    if reduce_type in ("sum", "mean"):
        total = _scatter_sum(vv, ids, num_segments)
        if reduce_type == "sum":
            out = total.astype(vv.dtype)
            return _emit(out, (values,), lambda g: (g[ids],))
        counts = np.maximum(np.bincount(ids, minlength=num_segments), 1).astype(np.float64)
        shape = (num_segments,) + (1,) * len(trail)
        out = (total / counts.reshape(shape)).astype(vv.dtype)
        inv = (1.0 / counts).reshape(shape)
        return _emit(out, (values,), lambda g: ((g * inv.astype(g.dtype))[ids],))

    fill = -np.inf if reduce_type == "max" else np.inf
    ufunc = np.maximum if reduce_type == "max" else np.minimum
    acc = np.full((num_segments,) + trail, fill, dtype=np.float64)
    ufunc.at(acc, ids, vv)
    empty = np.isinf(acc) & (acc == fill)
    acc[empty] = 0.0
    out = acc.astype(vv.dtype)

    # Winner per (segment, column): lowest row index attaining the extremum.
    m = vv.shape[0]
    hit = vv == out[ids]
    rows = np.arange(m, dtype=np.int64).reshape((m,) + (1,) * len(trail))
    cand = np.where(hit, rows, m)
    first = np.full((num_segments,) + trail, m, dtype=np.int64)
    np.minimum.at(first, ids, cand)

    def vjp(g):
        grad = np.zeros_like(vv)
        valid = first < m
        flat_first = first[valid]
        col_index = np.nonzero(valid)
        target = (flat_first,) + col_index[1:]
        np.add.at(grad, target, g[valid])
        return (grad,)

    return _emit(out, (values,), vjp)


def segment_softmax(logits, segment_ids, num_segments: int):
    """Softmax over the rows sharing a segment id, separately per column."""
    lv = value_of(logits)
    ids = _check_ids(segment_ids, num_segments, "segment id")
    if ids.shape[0] != lv.shape[0]:
        raise DimensionError(f"{ids.shape[0]} segment ids for {lv.shape[0]} rows")
    if lv.shape[0] == 0:
        return _emit(lv.copy(), (logits,), lambda g: (g,))
    peak = np.full((num_segments,) + lv.shape[1:], -np.inf, dtype=np.float64)
    np.maximum.at(peak, ids, lv)
    shifted = np.exp(lv.astype(np.float64) - peak[ids])
    denom = _scatter_sum(shifted, ids, num_segments)
    out64 = shifted / denom[ids]
    out = out64.astype(lv.dtype)

    def vjp(g):
        inner = _scatter_sum(g * out64, ids, num_segments)
        return ((out64 * (g - inner[ids])).astype(lv.dtype),)

    return _emit(out, (logits,), vjp)


# Normalization and regularization -----------------------------------------

def layer_norm(x, gamma, beta, epsilon: float = 1e-5):
    xv, gv, bv = value_of(x), value_of(gamma), value_of(beta)
    if xv.ndim != 2 or xv.shape[1] < 1:
        raise DimensionError(f"layer_norm needs [n, d>=1], got {list(xv.shape)}")
    mean = xv.mean(axis=1, keepdims=True)
    centered = xv - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    normed = centered * inv_std
    out = normed * gv + bv
    d = xv.shape[1]

    def vjp(g):
        gn = g * gv
        gx = inv_std / d * (d * gn - gn.sum(axis=1, keepdims=True)
                            - normed * (gn * normed).sum(axis=1, keepdims=True))
        return (gx, (g * normed).sum(axis=0), g.sum(axis=0))

    return _emit(out.astype(xv.dtype), (x, gamma, beta), vjp)


def dropout(x, rate: float, training: bool, rng: Optional[np.random.Generator]):
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    xv = value_of(x)
    keep = rng.random(xv.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(xv.dtype)
    return _emit(xv * scale, (x,), lambda g: (g * scale,))


# Losses -------------------------------------------------------------------

def softmax_cross_entropy(logits, labels, weights):
    """Per-row cross entropy weighted by `weights`; returns the weighted sum."""
    lv = value_of(logits)
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    shifted = lv.astype(np.float64) - lv.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(lv.shape[0])
    out = np.asarray(-(w * logp[rows, labels]).sum(), dtype=lv.dtype)

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return ((g * w[:, None] * p).astype(lv.dtype),)

    return _emit(out, (logits,), vjp)


def sigmoid_cross_entropy(logits, labels, weights):
    """Binary cross entropy on a [n, 1] logit column; weighted sum."""
    lv = value_of(logits)
    z = lv.astype(np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray((w * loss).sum(), dtype=lv.dtype)

    def vjp(g):
        return ((g * w * (_sigmoid(z) - y)).reshape(lv.shape).astype(lv.dtype),)

    return _emit(out, (logits,), vjp)
