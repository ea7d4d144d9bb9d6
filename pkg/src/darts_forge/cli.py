"""``darts-forge`` command line: data generation, search, transfer, export and checks.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .cell import derive_architecture, export_architecture
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config, write_resolved
from .data import DatasetError, read_task, write_task, generate_synthetic_task
from .gradsuite import run_suite
from .model import SequenceModel
from .trainer import (NonFiniteLossError, adapt, evaluate, pretrain_multitask, search,
                      write_metrics_csv)

log = logging.getLogger("darts_forge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser, *, mode=False, fmt=None) -> None:
    p.add_argument("--config", help="JSON or TOML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (or file for derive)")
    p.add_argument("--preset", choices=["full", "desk"])
    p.add_argument("--epochs", type=int, help="override max_epochs")
    if mode:
        p.add_argument("--mode", choices=["only-param", "arch-param", "pruned"])
    if fmt:
        p.add_argument("--format", choices=fmt, default=fmt[0])


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="darts-forge", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic task datasets")
    _common(p)

    p = sub.add_parser("search", help="joint architecture and weight training on one task")
    _common(p, fmt=["json", "csv"])
    p.add_argument("--task", help="task directory (overrides config tasks)")
    p.add_argument("--frozen-alphas", action="store_true", help="keep alphas at their uniform start")
    p.add_argument("--frontend", choices=["darts", "vgg"])

    p = sub.add_parser("pretrain", help="multi-task pre-training on source tasks")
    _common(p, fmt=["json", "csv"])
    p.add_argument("--task", action="append", help="source task directory (repeatable)")
    p.add_argument("--frontend", choices=["darts", "vgg"])

    p = sub.add_parser("adapt", help="fine-tune a pre-trained checkpoint on a target task")
    _common(p, mode=True, fmt=["json", "csv"])
    p.add_argument("--checkpoint")
    p.add_argument("--target", help="target task directory")

    p = sub.add_parser("derive", help="export the dominant architecture of a checkpoint")
    _common(p, fmt=["json", "dot"])
    p.add_argument("checkpoint")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--sabotage", metavar="OP", help="corrupt the backward rule of OP (self-test)")

    p = sub.add_parser("eval", help="loss and CER of a checkpoint on a task split")
    _common(p)
    p.add_argument("checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--task-id", help="head to use (defaults to the task's own id)")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    return ap


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    for key in ("seed", "out", "preset", "mode"):
        if getattr(args, key, None) is not None:
            over[key] = getattr(args, key)
    if getattr(args, "epochs", None) is not None:
        over["max_epochs"] = args.epochs
    if getattr(args, "frozen_alphas", False):
        over["freeze_alphas"] = True
    if getattr(args, "frontend", None):
        over["model"] = {**cfg.model, "frontend": args.frontend}
    return replace(cfg, **over) if over else cfg


def _load_task(ref) -> object:
    path, tid = (ref, None) if isinstance(ref, str) else (ref["path"], ref["id"])
    task = read_task(path)
    return replace(task, task_id=tid) if tid and tid != task.task_id else task


def _task_refs(cli_value, cfg_value, what: str) -> list:
    refs = cli_value if cli_value else cfg_value
    if not refs:
        raise UsageError(f"no {what} given (use --task/--target or the config file)")
    return refs


def _write_outputs(cfg: RunConfig, result, fmt: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoint.dfck").write_bytes(result.checkpoint)
    if fmt == "csv":
        write_metrics_csv(result.history, out / "metrics.csv")
    return out


def cmd_gen_data(cfg: RunConfig) -> list:
    paths = []
    for scfg, path in cfg.synthetic_configs():
        write_task(generate_synthetic_task(scfg), path)
        paths.append(path)
    write_resolved(cfg, cfg.out)
    return paths


def cmd_search(cfg: RunConfig, task_ref=None, fmt: str = "json") -> Path:
    task = _load_task(_task_refs([task_ref] if task_ref else None, cfg.tasks, "task")[0])
    write_resolved(cfg, cfg.out)
    model = SequenceModel(cfg.model_config(), cfg.seed)
    result = search(model, task, cfg.train_config(), log_path=Path(cfg.out) / "metrics.jsonl")
    return _write_outputs(cfg, result, fmt)


def cmd_pretrain(cfg: RunConfig, task_refs=None, fmt: str = "json") -> Path:
    tasks = [_load_task(r) for r in _task_refs(task_refs, cfg.tasks, "source tasks")]
    write_resolved(cfg, cfg.out)
    model = SequenceModel(cfg.model_config(), cfg.seed)
    result = pretrain_multitask(model, tasks, cfg.train_config(), log_path=Path(cfg.out) / "metrics.jsonl")
    return _write_outputs(cfg, result, fmt)


def cmd_adapt(cfg: RunConfig, checkpoint=None, target_ref=None, fmt: str = "json") -> Path:
    ckpt = checkpoint or cfg.checkpoint
    if not ckpt:
        raise UsageError("adapt needs --checkpoint (or 'checkpoint' in the config)")
    target = _load_task(_task_refs([target_ref] if target_ref else None,
                                   [cfg.target] if cfg.target else None, "target task")[0])
    write_resolved(cfg, cfg.out)
    result = adapt(Path(ckpt), target, cfg.mode, cfg.train_config(),
                   log_path=Path(cfg.out) / "metrics.jsonl")
    return _write_outputs(cfg, result, fmt)


def cmd_derive(checkpoint, fmt: str = "json") -> bytes:
    model, _ = load_checkpoint(Path(checkpoint))
    if model.alphas is None:
        raise UsageError("checkpoint has no searchable cell (VGG frontend)")
    return export_architecture(derive_architecture(model.alphas, model.config.cell), fmt)


def cmd_gradcheck(tol: float = 1e-4, sabotage=None) -> tuple:
    results = run_suite(tol=tol, sabotage=sabotage)
    lines = [f"{r.name:<22s} {r.error:.3e} {'PASS' if r.passed else 'FAIL'}" for r in results]
    return all(r.passed for r in results), "\n".join(lines) + "\n"


def cmd_eval(checkpoint, task_path, split: str = "test", task_id=None) -> dict:
    model, _ = load_checkpoint(Path(checkpoint))
    task = read_task(task_path)
    if task_id:
        task = replace(task, task_id=task_id)
    if task.task_id not in model.heads:
        raise UsageError(f"checkpoint has no head for task {task.task_id!r} (heads: {model.heads.keys()})")
    metrics = evaluate(model, task, split)
    return {"task": task.task_id, "split": split, **metrics}


def _threads():
    n = os.environ.get("DARTS_FORGE_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        return threadpool_limits(limits=max(1, int(n)))
    except ValueError:
        raise UsageError(f"DARTS_FORGE_THREADS must be an integer, got {n!r}") from None


def _dispatch(args) -> int:
    out = sys.stdout
    if args.command == "gradcheck":
        ok, report = cmd_gradcheck(args.tol, args.sabotage)
        out.write(report)
        return EXIT_OK if ok else EXIT_RUNTIME
    if args.command == "derive":
        blob = cmd_derive(args.checkpoint, args.format)
        if args.out:
            Path(args.out).write_bytes(blob)
        else:
            out.write(blob.decode("utf-8"))
        return EXIT_OK
    if args.command == "eval":
        metrics = cmd_eval(args.checkpoint, args.task, args.split, args.task_id)
        text = json.dumps(metrics, sort_keys=True)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "eval.json").write_text(text + "\n")
        out.write(text + "\n")
        return EXIT_OK
    cfg = _run_config(args)
    if args.command == "gen-data":
        for p in cmd_gen_data(cfg):
            out.write(p + "\n")
    elif args.command == "search":
        out.write(str(cmd_search(cfg, args.task, args.format)) + "\n")
    elif args.command == "pretrain":
        out.write(str(cmd_pretrain(cfg, args.task, args.format)) + "\n")
    elif args.command == "adapt":
        out.write(str(cmd_adapt(cfg, args.checkpoint, args.target, args.format)) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with _threads():
            return _dispatch(args)
    except (UsageError, ConfigError, DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
