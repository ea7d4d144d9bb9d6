"""End-to-end recogniser: stem -> cell (or VGG) -> projection -> BiLSTM -> per-task head."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .cell import CellConfig, SupernetCell
from .nn import BiLSTM, ConvBlock, Linear, Module, VggBaselineBlock, downsampled_length
from .nn.candidates import _time_mask

FRONTENDS = ("darts", "vgg")


@dataclass(frozen=True)
class ModelConfig:
    frontend: str = "darts"
    cell: CellConfig = field(default_factory=lambda: CellConfig(k=3, channels=8))
    vgg_width: int = 8
    lstm_layers: int = 1
    lstm_hidden: int = 32
    feature_dim: int = 13
    projection_dim: int = 32

    def __post_init__(self):
        if self.frontend not in FRONTENDS:
            raise ValueError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        for name in ("vgg_width", "lstm_layers", "lstm_hidden", "feature_dim", "projection_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {"frontend": self.frontend, "cell": self.cell.to_dict(), "vgg_width": self.vgg_width,
                "lstm_layers": self.lstm_layers, "lstm_hidden": self.lstm_hidden,
                "feature_dim": self.feature_dim, "projection_dim": self.projection_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["cell"] = CellConfig.from_dict(d["cell"])
        return cls(**d)

    def with_frontend(self, frontend: str) -> "ModelConfig":
        return replace(self, frontend=frontend)


PRESETS = {
    "full": ModelConfig(cell=CellConfig(k=5, channels=32), vgg_width=128, lstm_layers=3,
                         lstm_hidden=360, feature_dim=83, projection_dim=360),
    "desk": ModelConfig(cell=CellConfig(k=3, channels=8), vgg_width=8, lstm_layers=1,
                        lstm_hidden=32, feature_dim=13, projection_dim=32),
}


@dataclass
class EncodedBatch:
    output: Tensor  # [N, T', 2 * lstm_hidden]
    lengths: np.ndarray


class TaskHead(Module):
    """Language-specific linear layer; vocabulary index 0 is the CTC blank."""

    def __init__(self, task_id: str, vocab: Sequence[str], d_in: int, rng: np.random.Generator):
        super().__init__()
        if len(vocab) < 2:
            raise ValueError(f"task {task_id!r}: vocabulary needs blank plus at least one label")
        self.task_id = task_id
        self.vocab = list(vocab)
        self.linear = Linear(d_in, len(vocab), rng)


class HeadDict(Module):
    def __setitem__(self, key: str, head: TaskHead) -> None:
        self._modules[key] = head

    def __getitem__(self, key: str) -> TaskHead:
        try:
            return self._modules[key]
        except KeyError:
            raise KeyError(f"no head for task {key!r}") from None

    def __contains__(self, key) -> bool:
        return key in self._modules

    def keys(self):
        return list(self._modules)


def head_seed(seed: int, task_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(task_id.encode("utf-8"))])


class SequenceModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        D = config.feature_dim
        if config.frontend == "darts":
            C = config.cell.channels
            self.stem = ConvBlock(1, C, 3, 1, rng, "conv-relu-bn")
            self.cell = SupernetCell(config.cell, rng)
            flat = config.cell.k * C * D
        else:
            self.vgg = VggBaselineBlock(config.vgg_width, rng)
            flat = config.vgg_width * downsampled_length(D)
        self.proj = Linear(flat, config.projection_dim, rng)
        self.lstm = BiLSTM(config.projection_dim, config.lstm_hidden, config.lstm_layers, rng)
        self.heads = HeadDict()

    @property
    def encoder_dim(self) -> int:
        return 2 * self.config.lstm_hidden

    def add_head(self, task_id: str, vocab: Sequence[str]) -> TaskHead:
        head = TaskHead(task_id, vocab, self.encoder_dim, head_seed(self.seed, task_id))
        self.heads[task_id] = head
        return head

    def arch_parameters(self) -> list:
        return self.cell.arch_parameters() if self.config.frontend == "darts" else []

    def weight_parameters(self) -> list:
        return self.parameters()

    @property
    def alphas(self):
        return self.cell.alphas if self.config.frontend == "darts" else None


def stem_forward(model: SequenceModel, features: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
    h = model.stem(features)
    return h * valid if valid is not None else h


def encode(model: SequenceModel, features, lengths, mode: Optional[str] = None) -> EncodedBatch:
    """Run features ``[N, 1, T, D]`` through the shared encoder."""
    if mode is not None:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        model.train(mode == "train")
    features = ag.as_tensor(features)
    cfg = model.config
    if features.ndim != 4 or features.shape[1] != 1:
        raise ag.ShapeError(f"features must be [N, 1, T, D], got {features.shape}")
    if features.shape[3] != cfg.feature_dim:
        raise ag.ShapeError(f"feature dim {features.shape[3]} != configured {cfg.feature_dim}")
    lengths = np.asarray(lengths, dtype=np.int64)
    N, _, T, D = features.shape
    if lengths.shape != (N,):
        raise ValueError(f"need one length per utterance, got {lengths.shape} for N={N}")
    if (lengths < 1).any():
        raise ValueError("zero-length utterance in batch")
    if (lengths > T).any():
        raise ValueError("utterance length exceeds padded time dimension")
    valid = _time_mask(lengths, T)
    if cfg.frontend == "darts":
        h = stem_forward(model, features * valid, valid)
        h = model.cell(h, valid)
    else:
        h, lengths = model.vgg(features * valid, lengths)
    N, Ch, Tp, Dp = h.shape
    z = h.transpose(0, 2, 1, 3).reshape(N, Tp, Ch * Dp)
    z = model.proj(z)
    out = model.lstm(z, lengths)
    return EncodedBatch(out, lengths)


def head_forward(head: TaskHead, enc: EncodedBatch) -> Tensor:
    """Per-frame log-probabilities ``[N, T', |vocab|]``."""
    if enc.output.shape[-1] != head.linear.weight.shape[1]:
        raise ag.ShapeError(
            f"head {head.task_id!r} expects {head.linear.weight.shape[1]}-dim encodings, "
            f"got {enc.output.shape[-1]}"
        )
    return ag.log_softmax(head.linear(enc.output))
