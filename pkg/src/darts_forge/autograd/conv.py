"""Stride-one 2-D convolution and pooling over ``[N, C, H, W]`` tensors.

The default convolution lowers to im2col + one matrix product.  The
``direct`` backend accumulates tap by tap with elementwise operations and
serves as the reference path.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ops import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _check_conv(x: Tensor, w: Tensor, dilation: int, padding: Optional[int]) -> tuple:
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be [N,C,H,W], got {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernel must be [Cout,Cin,k,k], got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but kernel expects {w.shape[1]}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    if dilation < 1:
        raise ValueError(f"conv2d: dilation must be positive, got {dilation}")
    same = dilation * (k - 1) // 2
    if padding is None:
        padding = same
    if padding != same:
        raise ShapeError(f"conv2d: padding {padding} does not preserve size (need {same})")
    return k, padding


def _im2col(xp: np.ndarray, k: int, d: int, H: int, W: int) -> np.ndarray:
    span = (k - 1) * d + 1
    win = sliding_window_view(xp, (span, span), axis=(2, 3))[:, :, :H, :W, ::d, ::d]
    N, C = xp.shape[:2]
    # rows ordered (n, h, w); columns ordered (c, kh, kw) to match kernel.reshape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * k * k)


def _cols_matmul(cols: np.ndarray, wmat: np.ndarray, N: int, H: int, W: int) -> np.ndarray:
    out = (cols @ wmat.T).reshape(N, H, W, wmat.shape[0])
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x, weight, bias=None, dilation: int = 1, padding: Optional[int] = None,
           backend: str = "gemm") -> Tensor:
    """Size-preserving convolution with zero padding ``dilation * (k - 1) / 2``."""
    x, weight = as_tensor(x), as_tensor(weight)
    k, p = _check_conv(x, weight, dilation, padding)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} vs {weight.shape[0]} output channels")
    if backend == "direct":
        return _conv2d_direct(x, weight, bias, dilation, p)
    if backend != "gemm":
        raise ValueError(f"unknown conv backend {backend!r}")

    N, C, H, W = x.shape
    Cout = weight.shape[0]
    d = dilation
    cols = _im2col(np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))), k, d, H, W)
    wmat = weight.data.reshape(Cout, -1)
    out = _cols_matmul(cols, wmat, N, H, W)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, Cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            # input gradient = same-size correlation with the flipped, transposed kernel
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
            gcols = _im2col(np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))), k, d, H, W)
            gx = _cols_matmul(gcols, wflip, N, H, W)
        res = [gx, gw]
        if bias is not None:
            res.append(g.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return tuple(res)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv2d")


def _conv2d_direct(x: Tensor, weight: Tensor, bias, d: int, p: int) -> Tensor:
    N, C, H, W = x.shape
    Cout, _, k, _ = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((N, Cout, H, W))
    for co in range(Cout):
        for ci in range(C):
            for i in range(k):
                for j in range(k):
                    out[:, co] += weight.data[co, ci, i, j] * xp[:, ci, i * d:i * d + H, j * d:j * d + W]
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for co in range(Cout):
            for ci in range(C):
                for i in range(k):
                    for j in range(k):
                        sl = (slice(None), ci, slice(i * d, i * d + H), slice(j * d, j * d + W))
                        gw[co, ci, i, j] = np.vdot(g[:, co], xp[sl])
                        gxp[sl] += weight.data[co, ci, i, j] * g[:, co]
        res = [np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W]), gw]
        if bias is not None:
            res.append(g.sum(axis=(0, 2, 3)))
        return tuple(res)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw, "conv2d")


def _valid_mask(valid: Optional[np.ndarray], shape: tuple) -> Optional[np.ndarray]:
    if valid is None:
        return None
    return np.broadcast_to(np.asarray(valid, dtype=bool), shape)


def pool2d(x, kind: str, window: int = 3, padding: int = 1, valid: Optional[np.ndarray] = None) -> Tensor:
    """Stride-one max or average pooling that preserves spatial size.

    Max pooling pads with -inf; average pooling divides by the number of
    in-bounds elements.  ``valid`` (boolean, broadcastable to the input)
    marks real positions: invalid ones are treated exactly like padding and
    their outputs are zero.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"pool2d: input must be [N,C,H,W], got {x.shape}")
    if kind not in ("max", "avg"):
        raise ValueError(f"pool2d: kind must be 'max' or 'avg', got {kind!r}")
    if window != 2 * padding + 1:
        raise ShapeError(f"pool2d: window {window} with padding {padding} does not preserve size")
    N, C, H, W = x.shape
    p, k = padding, window
    vm = _valid_mask(valid, x.shape)
    inb = np.ones(x.shape, dtype=bool) if vm is None else vm
    inbp = np.pad(inb, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=False)
    if kind == "max":
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
        if vm is not None:
            xp = np.where(inbp, xp, -np.inf)
        win = sliding_window_view(xp, (k, k), axis=(2, 3)).reshape(N, C, H, W, k * k)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        if vm is not None:
            out = np.where(vm, out, 0.0)

        def bw(g):
            if vm is not None:
                g = np.where(vm, g, 0.0)
            gxp = np.zeros(xp.shape)
            for t in range(k * k):
                i, j = divmod(t, k)
                gxp[:, :, i:i + H, j:j + W] += np.where(arg == t, g, 0.0)
            return (np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W]),)

        return make_result(np.ascontiguousarray(out), (x,), bw, "max_pool2d")

    xp = np.pad(np.where(inb, x.data, 0.0), ((0, 0), (0, 0), (p, p), (p, p)))
    total = sliding_window_view(xp, (k, k), axis=(2, 3)).sum(axis=(-2, -1))
    count = sliding_window_view(inbp, (k, k), axis=(2, 3)).sum(axis=(-2, -1))
    count = np.maximum(count, 1)
    out = total / count
    if vm is not None:
        out = np.where(vm, out, 0.0)

    def bw(g):
        gs = g / count
        if vm is not None:
            gs = np.where(vm, gs, 0.0)
        gxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + H, j:j + W] += gs
        gx = gxp[:, :, p:p + H, p:p + W]
        return (np.ascontiguousarray(np.where(inb, gx, 0.0)),)

    return make_result(np.ascontiguousarray(out), (x,), bw, "avg_pool2d")


def max_pool_downsample(x, valid: Optional[np.ndarray] = None) -> Tensor:
    """2x2 max pooling with stride 2 (ceil mode) on both spatial axes."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool_downsample: input must be [N,C,H,W], got {x.shape}")
    N, C, H, W = x.shape
    Ho, Wo = -(-H // 2), -(-W // 2)
    vm = _valid_mask(valid, x.shape)
    xp = np.full((N, C, 2 * Ho, 2 * Wo), -np.inf)
    xp[:, :, :H, :W] = x.data if vm is None else np.where(vm, x.data, -np.inf)
    blocks = xp.reshape(N, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    dead = ~np.isfinite(out)
    out = np.where(dead, 0.0, out)

    def bw(g):
        g = np.where(dead, 0.0, g)
        gb = np.zeros((N, C, Ho, Wo, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gxp = gb.reshape(N, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * Ho, 2 * Wo)
        return (np.ascontiguousarray(gxp[:, :, :H, :W]),)

    return make_result(np.ascontiguousarray(out), (x,), bw, "max_pool_downsample")
