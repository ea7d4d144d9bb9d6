"""Differentiable architecture search for CTC sequence recognizers, on a small numpy autograd."""

from .cell import (AlphaTable, CellConfig, DerivedArchitecture, derive_architecture, export_architecture,
                   prune_top_k)
from .checkpoint import load_checkpoint, save_checkpoint
from .ctc import ctc_loss, greedy_decode
from .data import SyntheticTaskConfig, TaskData, generate_synthetic_task, read_task, write_task
from .estimator import DartsRecognizer
from .model import PRESETS, ModelConfig, SequenceModel
from .nn import TransformationKind
from .optim import OptimizerConfig
from .trainer import AdaptationMode, TrainConfig, adapt, evaluate, pretrain_multitask, search

__version__ = "0.1.0"

__all__ = [
    "AlphaTable", "CellConfig", "DerivedArchitecture", "derive_architecture", "export_architecture",
    "prune_top_k", "load_checkpoint", "save_checkpoint", "ctc_loss", "greedy_decode",
    "SyntheticTaskConfig", "TaskData", "generate_synthetic_task", "read_task", "write_task",
    "DartsRecognizer", "PRESETS", "ModelConfig", "SequenceModel", "TransformationKind",
    "OptimizerConfig", "AdaptationMode", "TrainConfig", "adapt", "evaluate", "pretrain_multitask",
    "search",
]
