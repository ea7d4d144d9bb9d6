"""Elementwise, reduction, shape and normalisation primitives."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with a primitive."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return make_result(a.data ** p, (a,), bw, "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# -- reductions and shape --------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_result(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    basic = _is_basic_index(index)

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return make_result(np.array(out, dtype=np.float64, order="C"), (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Join tensors along ``axis`` (channels by default), in argument order."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(out)

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % (tensors[0].ndim + 1)

    def bw(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=ax)) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=ax), tensors, bw, "stack")


# -- activations -----------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return make_result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return make_result(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(kind: str, a) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(a)


# -- softmax family ----------------------------------------------------------

def _masked(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def softmax(a, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (boolean, broadcastable) removes entries: their weight is
    exactly zero and the rest renormalise among themselves.
    """
    a = as_tensor(a)
    z = _masked(a.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (a,), bw, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (a,), bw, "log_softmax")


# -- affine / mixing -------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input last dim {x.shape[-1]} vs weight {weight.shape}")
    parents = [x, weight]
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.shape} vs weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ weight.data) if x.requires_grad else None
        gw = (g2.T @ x.data.reshape(-1, x.shape[-1])) if weight.requires_grad else None
        res = [gx, gw]
        if bias is not None:
            res.append(g2.sum(axis=0) if bias.requires_grad else None)
        return tuple(res)

    return make_result(out, parents, bw, "linear")


def mix(values: Sequence[Tensor], weights: Tensor, index: Sequence[int]) -> Tensor:
    """``sum_k weights[index[k]] * values[k]`` for a 1-D weight tensor."""
    values = [as_tensor(v) for v in values]
    weights = as_tensor(weights)
    idx = list(index)
    out = np.zeros_like(values[0].data)
    for v, i in zip(values, idx):
        out += weights.data[i] * v.data

    def bw(g):
        gv = [g * weights.data[i] if v.requires_grad else None for v, i in zip(values, idx)]
        gw = None
        if weights.requires_grad:
            gw = np.zeros_like(weights.data)
            for v, i in zip(values, idx):
                gw[i] += float(np.vdot(g, v.data))
        return tuple(gv) + (gw,)

    return make_result(out, tuple(values) + (weights,), bw, "mix")


# -- normalisation ---------------------------------------------------------

def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation of an ``[N, C, H, W]`` tensor.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance); in eval mode
    the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    shape = (1, -1, 1, 1)
    if training:
        if m < 2:
            raise ValueError("batch_norm in train mode needs at least two elements per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / (m - 1)
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = g.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if training:
                s1 = dxhat.sum(axis=axes).reshape(shape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
                dx = (inv.reshape(shape) / m) * (m * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv.reshape(shape)
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), bw, "batch_norm")


# -- recurrence --------------------------------------------------------------

def lstm_cell(x, h, c, w_ih, w_hh, bias) -> Tensor:
    """One LSTM step; returns ``concat([h', c'], axis=-1)`` of shape ``[N, 2H]``.

    Gate layout in the weight rows is input, forget, candidate, output.
    """
    x, h, c, w_ih, w_hh, bias = (as_tensor(t) for t in (x, h, c, w_ih, w_hh, bias))
    H = h.shape[-1]
    if w_ih.shape != (4 * H, x.shape[-1]) or w_hh.shape != (4 * H, H) or bias.shape != (4 * H,):
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {bias.shape}"
        )
    if c.shape != h.shape or x.shape[0] != h.shape[0]:
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}")
    z = x.data @ w_ih.data.T + h.data @ w_hh.data.T + bias.data
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    gg = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(grad):
        gh, gc = grad[:, :H], grad[:, H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        do = gh * tc
        di = dc * gg
        dg = dc * i
        df = dc * c.data
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1
        )
        return (
            dz @ w_ih.data if x.requires_grad else None,
            dz @ w_hh.data if h.requires_grad else None,
            dc * f if c.requires_grad else None,
            dz.T @ x.data if w_ih.requires_grad else None,
            dz.T @ h.data if w_hh.requires_grad else None,
            dz.sum(axis=0) if bias.requires_grad else None,
        )

    return make_result(np.concatenate([h_new, c_new], axis=1), (x, h, c, w_ih, w_hh, bias), bw, "lstm_cell")
