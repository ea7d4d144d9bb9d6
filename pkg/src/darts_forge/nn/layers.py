"""Basic layers: linear, batch-norm, conv block, LSTM."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from .module import Module, ModuleList, Parameter, uniform_fan_in

CONV_ORDERS = ("conv-relu-bn", "relu-conv-bn")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(uniform_fan_in(rng, (d_out, d_in), d_in))
        self.bias = Parameter(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ag.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class ConvBlock(Module):
    """Convolution with ReLU and batch-norm.

    ``order="conv-relu-bn"`` (default) or ``order="relu-conv-bn"``.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int,
                 rng: np.random.Generator, order: str = "conv-relu-bn"):
        super().__init__()
        if order not in CONV_ORDERS:
            raise ValueError(f"conv order must be one of {CONV_ORDERS}, got {order!r}")
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(uniform_fan_in(rng, (c_out, c_in, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(c_out))
        self.bn = BatchNorm2d(c_out)
        self.kernel = kernel
        self.dilation = dilation
        self.order = order

    def forward(self, x: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        if self.order == "conv-relu-bn":
            h = ag.relu(ag.conv2d(x, self.weight, self.bias, dilation=self.dilation))
        else:
            h = ag.conv2d(ag.relu(x), self.weight, self.bias, dilation=self.dilation)
        return self.bn(h)


class LSTM(Module):
    """Single-direction LSTM layer over ``[N, T, D]`` inputs."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.w_ih = Parameter(uniform_fan_in(rng, (4 * hidden, d_in), hidden))
        self.w_hh = Parameter(uniform_fan_in(rng, (4 * hidden, hidden), hidden))
        self.bias = Parameter(np.zeros(4 * hidden))

    def forward(self, x: Tensor) -> Tensor:
        N, T, _ = x.shape
        H = self.hidden
        h = Tensor(np.zeros((N, H)))
        c = Tensor(np.zeros((N, H)))
        outs = []
        for t in range(T):
            hc = ag.lstm_cell(x[:, t, :], h, c, self.w_ih, self.w_hh, self.bias)
            h, c = hc[:, :H], hc[:, H:]
            outs.append(h)
        return ag.stack(outs, axis=1)


def reverse_within_length(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Reverse the first ``lengths[n]`` frames of each sequence, leaving padding in place."""
    N, T = x.shape[:2]
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    idx = np.where(t < L, L - 1 - t, t)
    return x[np.arange(N)[:, None], idx]


class BiLSTM(Module):
    def __init__(self, d_in: int, hidden: int, layers: int, rng: np.random.Generator):
        super().__init__()
        self.forward_layers = ModuleList()
        self.backward_layers = ModuleList()
        d = d_in
        for _ in range(layers):
            self.forward_layers.append(LSTM(d, hidden, rng))
            self.backward_layers.append(LSTM(d, hidden, rng))
            d = 2 * hidden

    def forward(self, x: Tensor, lengths: np.ndarray) -> Tensor:
        for fwd, bwd in zip(self.forward_layers, self.backward_layers):
            out_f = fwd(x)
            out_b = reverse_within_length(bwd(reverse_within_length(x, lengths)), lengths)
            x = ag.concat([out_f, out_b], axis=-1)
        return x
