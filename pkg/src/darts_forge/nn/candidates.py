"""The seven searchable transformations and the fixed VGG-style baseline."""

from __future__ import annotations

import enum
from typing import Optional

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from .layers import ConvBlock
from .module import Module, ModuleList


class TransformationKind(enum.IntEnum):
    Conv3x3 = 0
    Conv5x5 = 1
    DilConv3x3 = 2
    DilConv5x5 = 3
    AvgPool3x3 = 4
    MaxPool3x3 = 5
    SkipConnect = 6

    @classmethod
    def parse(cls, name: str) -> "TransformationKind":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown transformation {name!r}; expected one of {[k.name for k in cls]}") from None


ALL_KINDS = tuple(TransformationKind)
DILATION = 2

_CONV_SPECS = {
    TransformationKind.Conv3x3: (3, 1),
    TransformationKind.Conv5x5: (5, 1),
    TransformationKind.DilConv3x3: (3, DILATION),
    TransformationKind.DilConv5x5: (5, DILATION),
}


class ConvTransformation(ConvBlock):
    def __init__(self, kind: TransformationKind, channels: int, rng: np.random.Generator,
                 order: str = "conv-relu-bn"):
        k, d = _CONV_SPECS[kind]
        super().__init__(channels, channels, k, d, rng, order)
        self.kind = kind
        self.channels = channels


class PoolTransformation(Module):
    def __init__(self, kind: TransformationKind, channels: int):
        super().__init__()
        self.kind = kind
        self.channels = channels
        self._pool = "avg" if kind == TransformationKind.AvgPool3x3 else "max"

    def forward(self, x: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        return ag.pool2d(x, self._pool, window=3, padding=1, valid=valid)


class SkipConnect(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.kind = TransformationKind.SkipConnect
        self.channels = channels

    def forward(self, x: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        return x


def make_transformation(kind: TransformationKind, channels: int, rng: np.random.Generator,
                        order: str = "conv-relu-bn") -> Module:
    kind = TransformationKind(kind)
    if kind in _CONV_SPECS:
        return ConvTransformation(kind, channels, rng, order)
    if kind == TransformationKind.SkipConnect:
        return SkipConnect(channels)
    return PoolTransformation(kind, channels)


def build_candidate_set(channels: int, seed: int, kinds=ALL_KINDS, order: str = "conv-relu-bn") -> ModuleList:
    """One instance of each kind, initialised deterministically from ``seed``."""
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    rng = np.random.default_rng(seed)
    return ModuleList(make_transformation(k, channels, rng, order) for k in kinds)


def apply_transformation(t: Module, x: Tensor, mode: str = "train",
                         valid: Optional[np.ndarray] = None) -> Tensor:
    if x.ndim != 4 or x.shape[1] != t.channels:
        raise ag.ShapeError(f"{t.kind.name} expects {t.channels} channels, got input {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    t.train(mode == "train")
    return t(x, valid)


class VggBaselineBlock(Module):
    """Six 3x3 conv blocks in two stages of three, each stage ending in 2x2/2 max-pool."""

    PRESETS = {"small": 8, "large": 16}

    def __init__(self, width: int, rng: np.random.Generator, in_channels: int = 1):
        super().__init__()
        self.width = width
        self.layers = ModuleList()
        c = in_channels
        for _ in range(6):
            self.layers.append(ConvBlock(c, width, 3, 1, rng, "conv-relu-bn"))
            c = width

    def forward(self, x: Tensor, lengths: np.ndarray) -> tuple:
        lengths = np.asarray(lengths)
        for stage in range(2):
            valid = _time_mask(lengths, x.shape[2])
            for layer in self.layers[3 * stage:3 * stage + 3]:
                x = layer(x) * valid
            x = ag.max_pool_downsample(x, valid=valid)
            lengths = -(-lengths // 2)
        return x, lengths


def _time_mask(lengths: np.ndarray, T: int) -> np.ndarray:
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)[:, None, :, None]


def downsampled_length(T: int) -> int:
    return -(-(-(-T // 2)) // 2)
