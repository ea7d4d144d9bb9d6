"""Joint weight/architecture training, multi-task pre-training and adaptation."""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autograd import backward, no_grad
from .cell import derive_architecture, prune_top_k
from .checkpoint import checkpoint_bytes, load_checkpoint
from .ctc import ctc_loss_batch, edit_distance, greedy_decode, per_utterance_losses
from .data import Batch, TaskData, make_batches
from .model import SequenceModel, encode, head_forward
from .optim import SGD, Adam, OptimizerConfig, PlateauSchedule, clip_grad_norm, plateau_update

log = logging.getLogger(__name__)



class AdaptationMode(str, enum.Enum):
    ONLY_PARAM = "only-param"
    ARCH_PARAM = "arch-param"
    PRUNED_ARCH_PARAM = "pruned"


class NonFiniteLossError(RuntimeError):
    def __init__(self, batch_id: str, value: float):
        super().__init__(f"non-finite training loss {value} on batch {batch_id}")
        self.batch_id = batch_id
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 16
    max_epochs: int = 20
    max_lr_reductions: int = 3
    freeze_alphas: bool = False
    bilevel: bool = False
    sort_by_length: bool = False
    prune_k: int = 3
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optim"] = self.optim.to_dict()
        return d


@dataclass
class RunResult:
    model: SequenceModel
    history: list
    checkpoint: bytes = b""


class Trainer:
    """Owns the two optimizers and the plateau schedule for one model."""

    def __init__(self, model: SequenceModel, cfg: TrainConfig, freeze_alphas: Optional[bool] = None):
        self.model = model
        self.cfg = cfg
        o = cfg.optim
        self.freeze_alphas = cfg.freeze_alphas if freeze_alphas is None else freeze_alphas
        self.weight_params = model.weight_parameters()
        self.w_opt = SGD(self.weight_params, o.weight_lr, o.momentum, o.weight_decay)
        self.a_opt = None
        if model.alphas is not None:
            alpha = model.alphas.alpha
            alpha.requires_grad = not self.freeze_alphas
            if not self.freeze_alphas:
                self.a_opt = Adam([alpha], o.alpha_lr, o.alpha_betas, weight_decay=o.alpha_weight_decay,
                                  masks=[model.alphas.mask])
        self.schedule = PlateauSchedule(o.plateau_factor, o.plateau_patience)

    @property
    def optimizers(self) -> list:
        return [self.w_opt] + ([self.a_opt] if self.a_opt is not None else [])

    def zero_grad(self) -> None:
        self.model.zero_grad()
        if self.model.alphas is not None:
            self.model.alphas.alpha.grad = None

    def _loss(self, batch: Batch, task_id: str):
        enc = encode(self.model, batch.features, batch.lengths, "train")
        lp = head_forward(self.model.heads[task_id], enc)
        return ctc_loss_batch(lp, enc.lengths, batch.labels)

    def _guarded_loss(self, batch: Batch, task_id: str):
        saved = [(b, b.copy()) for _, b in self.model.named_buffers()]
        loss = self._loss(batch, task_id)
        value = loss.item()
        if not math.isfinite(value):
            for buf, old in saved:
                np.copyto(buf, old)
            self.zero_grad()
            raise NonFiniteLossError(",".join(batch.ids), value)
        return loss, value

    def step(self, batch: Batch, task_id: str, alpha_batch: Optional[Batch] = None) -> float:
        """One optimisation step; returns the training loss on ``batch``."""
        self.zero_grad()
        if alpha_batch is not None and self.a_opt is not None:
            loss, _ = self._guarded_loss(alpha_batch, task_id)
            backward(loss)
            self.a_opt.step()
            self.zero_grad()
            loss, value = self._guarded_loss(batch, task_id)
            backward(loss)
            self._weight_step()
        else:
            loss, value = self._guarded_loss(batch, task_id)
            backward(loss)
            self._weight_step()
            if self.a_opt is not None:
                self.a_opt.step()
        self.zero_grad()
        return value

    def _weight_step(self) -> None:
        if self.cfg.optim.clip_norm:
            clip_grad_norm(self.weight_params, self.cfg.optim.clip_norm)
        self.w_opt.step()

    @property
    def lr_w(self) -> float:
        return self.w_opt.lr

    @property
    def lr_alpha(self) -> Optional[float]:
        return self.a_opt.lr if self.a_opt is not None else None


def train_step(model: SequenceModel, batch: Batch, trainer: Trainer, task_id: str,
               freeze_alphas: bool = False) -> float:
    """Forward, backward and update on one batch from one task."""
    if freeze_alphas and trainer.a_opt is not None:
        a_opt, trainer.a_opt = trainer.a_opt, None
        try:
            return trainer.step(batch, task_id)
        finally:
            trainer.a_opt = a_opt
    return trainer.step(batch, task_id)


def interleave_batches(tasks: Sequence[TaskData], batch_size: int, seed: int, epoch: int,
                       sort_by_length: bool = False) -> list:
    """Round-robin ``(task_id, batch)`` schedule for one epoch."""
    per_task = [make_batches(t.train, batch_size, seed=[seed, epoch, i], sort_by_length=sort_by_length)
                for i, t in enumerate(tasks)]
    out = []
    for r in range(max((len(b) for b in per_task), default=0)):
        for t, batches in zip(tasks, per_task):
            if r < len(batches):
                out.append((t.task_id, batches[r]))
    return out


def evaluate(model: SequenceModel, task: TaskData, split: str = "val", batch_size: int = 32) -> dict:
    """Mean per-utterance CTC loss and corpus CER (%) with greedy decoding."""
    utts = task.split(split)
    if not utts:
        raise ValueError(f"task {task.task_id!r} has an empty {split} split")
    model.eval()
    head = model.heads[task.task_id]
    losses, edits, ref_len = [], 0, 0
    with no_grad():
        for batch in make_batches(utts, batch_size, shuffle=False):
            enc = encode(model, batch.features, batch.lengths)
            lp = head_forward(head, enc).data
            losses.extend(per_utterance_losses(lp, enc.lengths, batch.labels))
            for n, ref in enumerate(batch.labels):
                hyp = greedy_decode(lp[n, :enc.lengths[n]])
                edits += edit_distance(hyp, ref)
                ref_len += len(ref)
    model.train()
    return {"loss": float(np.mean(losses)), "cer": 100.0 * edits / max(ref_len, 1)}


def _check_labels(task: TaskData) -> None:
    V = len(task.vocab)
    for split in ("train", "val", "test"):
        for u in task.split(split):
            if u.labels and (min(u.labels) < 1 or max(u.labels) >= V):
                raise ValueError(f"{u.id}: labels outside vocabulary of task {task.task_id!r}")


def _check_task(model: SequenceModel, task: TaskData) -> None:
    _check_labels(task)
    if task.task_id in model.heads and model.heads[task.task_id].vocab != list(task.vocab):
        raise ValueError(f"task {task.task_id!r}: vocabulary differs from the existing head")


def fit(model: SequenceModel, tasks: Sequence[TaskData], cfg: TrainConfig, log_path=None,
        freeze_alphas: Optional[bool] = None, epochs: Optional[int] = None) -> list:
    """Train on one or more tasks with round-robin interleaving; returns per-epoch records."""
    if not tasks:
        raise ValueError("need at least one task")
    for t in tasks:
        _check_task(model, t)
        if t.task_id not in model.heads:
            model.add_head(t.task_id, t.vocab)
    trainer = Trainer(model, cfg, freeze_alphas)
    history = []
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, (epochs or cfg.max_epochs) + 1):
            sums = {t.task_id: [0.0, 0] for t in tasks}
            val_iters = {}
            if cfg.bilevel:
                val_iters = {t.task_id: iter(make_batches(t.val, cfg.batch_size, seed=[cfg.seed, epoch, 99]))
                             for t in tasks}
            for task_id, batch in interleave_batches(tasks, cfg.batch_size, cfg.seed, epoch, cfg.sort_by_length):
                alpha_batch = _next_cycled(val_iters, task_id, tasks, cfg, epoch) if cfg.bilevel else None
                sums[task_id][0] += trainer.step(batch, task_id, alpha_batch)
                sums[task_id][1] += 1
            val_losses = []
            for t in tasks:
                m = evaluate(model, t, "val")
                val_losses.append(m["loss"])
                rec = {"epoch": epoch, "task": t.task_id,
                       "train_loss": sums[t.task_id][0] / max(sums[t.task_id][1], 1),
                       "val_loss": m["loss"], "lr_w": trainer.lr_w, "lr_alpha": trainer.lr_alpha,
                       "cer": m["cer"]}
                if not math.isfinite(m["loss"]):
                    raise RuntimeError(f"non-finite validation loss at epoch {epoch} for {t.task_id}")
                history.append(rec)
                if fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    fh.flush()
                log.info("epoch %d %s train %.4f val %.4f cer %.2f", epoch, t.task_id,
                         rec["train_loss"], rec["val_loss"], rec["cer"])
            plateau_update(trainer.schedule, float(np.mean(val_losses)), trainer.optimizers)
            if trainer.schedule.reductions >= cfg.max_lr_reductions:
                break
    finally:
        if fh:
            fh.close()
    return history


def _next_cycled(iters: dict, task_id: str, tasks, cfg: TrainConfig, epoch: int) -> Batch:
    try:
        return next(iters[task_id])
    except StopIteration:
        task = next(t for t in tasks if t.task_id == task_id)
        iters[task_id] = iter(make_batches(task.val, cfg.batch_size, seed=[cfg.seed, epoch, 98]))
        return next(iters[task_id])


def _finish(model: SequenceModel, history: list, extra: Optional[dict] = None) -> RunResult:
    meta = {"metrics": history}
    if model.alphas is not None:
        meta["architecture"] = derive_architecture(model.alphas, model.config.cell).dominant
    meta.update(extra or {})
    return RunResult(model, history, checkpoint_bytes(model, meta))


def search(model: SequenceModel, task: TaskData, cfg: TrainConfig, log_path=None) -> RunResult:
    """Monolingual joint search on a single task."""
    history = fit(model, [task], cfg, log_path)
    return _finish(model, history, {"stage": "search", "task": task.task_id})


def pretrain_multitask(model: SequenceModel, tasks: Sequence[TaskData], cfg: TrainConfig,
                       epochs: Optional[int] = None, log_path=None) -> RunResult:
    """Shared encoder and alphas trained on all source tasks, one head per task."""
    if not tasks:
        raise ValueError("pre-training needs at least one source task")
    history = fit(model, list(tasks), cfg, log_path, epochs=epochs)
    return _finish(model, history, {"stage": "pretrain", "tasks": [t.task_id for t in tasks]})


def adapt(checkpoint, target: TaskData, mode, cfg: TrainConfig, epochs: Optional[int] = None,
          log_path=None) -> RunResult:
    """Fine-tune a pre-trained shared model on ``target`` with a fresh head."""
    mode = AdaptationMode(mode)
    model, _ = load_checkpoint(checkpoint)
    if target.task_id in model.heads and model.heads[target.task_id].vocab != list(target.vocab):
        raise ValueError(f"target {target.task_id!r}: vocabulary mismatch against checkpoint head")
    _check_labels(target)
    model.add_head(target.task_id, target.vocab)
    if model.alphas is not None and mode is AdaptationMode.PRUNED_ARCH_PARAM:
        model.cell.alphas = prune_top_k(model.alphas, cfg.prune_k)
    freeze = mode is AdaptationMode.ONLY_PARAM
    history = fit(model, [target], cfg, log_path, freeze_alphas=freeze, epochs=epochs)
    return _finish(model, history, {"stage": "adapt", "task": target.task_id, "mode": mode.value})


def write_metrics_csv(history: Sequence[dict], path) -> None:
    """Whitespace-free CSV of the metrics log (gnuplot: ``set datafile separator ','``)."""
    cols = ["epoch", "task", "train_loss", "val_loss", "lr_w", "lr_alpha", "cer"]
    lines = [",".join(cols)]
    for r in history:
        lines.append(",".join("" if r.get(c) is None else str(r[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
