"""Declarative run configuration (JSON or TOML) with strict key checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import tomli

from .cell import CellConfig
from .data import SyntheticTaskConfig
from .model import PRESETS, ModelConfig
from .nn import TransformationKind
from .optim import OptimizerConfig
from .trainer import AdaptationMode, TrainConfig

# Training numbers per preset.  The desk preset raises the alpha step size so
# that architecture weights move measurably within a few hundred updates.
OPTIM_PRESETS = {
    "full": OptimizerConfig(),
    "desk": OptimizerConfig(alpha_lr=1e-2),
}

DATA_PRESETS = {
    "full": SyntheticTaskConfig(feature_dim=83),
    "desk": SyntheticTaskConfig(seg_min=2, seg_max=5, n_train=300, n_val=50, n_test=100),
}

MODEL_KEYS = {"frontend", "vgg_width", "lstm_layers", "lstm_hidden", "feature_dim", "projection_dim"}
CELL_KEYS = {"k", "channels", "candidates", "conv_order"}
TRAIN_KEYS = {"batch_size", "max_lr_reductions", "bilevel", "sort_by_length", "prune_k"}
TASK_KEYS = {"id", "path"}


class ConfigError(ValueError):
    pass


def _reject_unknown(section: str, got: dict, allowed: set) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


@dataclass(frozen=True)
class TaskRef:
    id: str
    path: str


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    out: str = "runs/out"
    max_epochs: int = 15
    mode: str = AdaptationMode.ARCH_PARAM.value
    freeze_alphas: bool = False
    checkpoint: Optional[str] = None
    model: dict = field(default_factory=dict)
    cell: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    tasks: list = field(default_factory=list)
    target: Optional[dict] = None
    synthetic: list = field(default_factory=list)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        try:
            AdaptationMode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}") from None
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        _reject_unknown("[model]", self.model, MODEL_KEYS)
        _reject_unknown("[cell]", self.cell, CELL_KEYS)
        _reject_unknown("[optim]", self.optim, {f.name for f in fields(OptimizerConfig)})
        _reject_unknown("[train]", self.train, TRAIN_KEYS)
        for t in self.tasks + ([self.target] if self.target else []):
            if not isinstance(t, dict) or set(t) != TASK_KEYS:
                raise ConfigError(f"task entries need exactly keys {sorted(TASK_KEYS)}, got {t!r}")
        synth_keys = {f.name for f in fields(SyntheticTaskConfig)} | {"path"}
        for s in self.synthetic:
            _reject_unknown("[[synthetic]]", s, synth_keys)

    @classmethod
    def from_mapping(cls, d: dict) -> "RunConfig":
        _reject_unknown("top level", d, {f.name for f in fields(cls)})
        return cls(**d)

    # -- resolution ------------------------------------------------------
    def model_config(self) -> ModelConfig:
        base = PRESETS[self.preset]
        cell_over = dict(self.cell)
        if "candidates" in cell_over:
            cell_over["candidates"] = tuple(TransformationKind.parse(c) for c in cell_over["candidates"])
        try:
            cell = replace(base.cell, **cell_over)
            return replace(base, cell=cell, **self.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model settings: {exc}") from exc

    def optimizer_config(self) -> OptimizerConfig:
        try:
            return replace(OPTIM_PRESETS[self.preset], **self.optim)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid optimizer settings: {exc}") from exc

    def train_config(self) -> TrainConfig:
        return TrainConfig(optim=self.optimizer_config(), max_epochs=self.max_epochs,
                           freeze_alphas=self.freeze_alphas, seed=self.seed, **self.train)

    def synthetic_configs(self) -> list:
        """``(SyntheticTaskConfig, path)`` pairs; defaults to two sources and one target."""
        base = DATA_PRESETS[self.preset]
        specs = self.synthetic or [{"task_id": "src-a"}, {"task_id": "src-b"}, {"task_id": "target"}]
        out = []
        for i, s in enumerate(specs):
            s = dict(s)
            path = s.pop("path", None) or str(Path(self.out) / s.get("task_id", f"task{i}"))
            s.setdefault("seed", self.seed * 1000 + i)
            s.setdefault("family_seed", self.seed)
            try:
                out.append((replace(base, **s), path))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid synthetic task {s!r}: {exc}") from exc
        return out

    def resolved(self) -> dict:
        d = asdict(self)
        d["resolved"] = {"model": self.model_config().to_dict(), "train": self.train_config().to_dict()}
        return d


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        if p.suffix.lower() == ".toml":
            raw = tomli.loads(text.decode("utf-8"))
        else:
            raw = json.loads(text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a table/object")
    raw.pop("resolved", None)
    return RunConfig.from_mapping(raw)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
    return path
