"""Finite-difference check of every differentiable primitive plus one end-to-end path."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .autograd.gradcheck import grad_check
from .cell import CellConfig
from .ctc import ctc_loss, ctc_loss_batch
from .model import ModelConfig, SequenceModel, encode, head_forward


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    passed: bool


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Reduce to a scalar with fixed random weights so every output entry matters."""
    return ag.sum_(out * Tensor(rng.normal(size=out.shape)))


def _case(seed: int, *shapes, positive: bool = False) -> list:
    rng = np.random.default_rng(seed)
    arrs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    return [Tensor(a, requires_grad=True) for a in arrs]


def _scalarize(fn: Callable, seed: int) -> Callable:
    def f(*xs):
        return _weighted(fn(*xs), np.random.default_rng(seed + 1000))
    return f


def _primitive_cases() -> dict:
    """name -> (scalar function of tensors, inputs)."""
    rng = np.random.default_rng(7)
    mask = np.array([[True, False, True, True], [True, True, False, True]])
    bn_state = lambda c: (np.zeros(c), np.ones(c))  # noqa: E731
    cases = {
        "add": (ag.add, _case(1, (3, 4), (4,))),
        "sub": (ag.sub, _case(2, (3, 4), (3, 1))),
        "mul": (ag.mul, _case(3, (3, 4), (3, 4))),
        "div": (ag.div, _case(4, (3, 4), (3, 4), positive=True)),
        "neg": (ag.neg, _case(5, (2, 3))),
        "power": (lambda a: ag.power(a, 3.0), _case(6, (2, 3), positive=True)),
        "matmul": (ag.matmul, _case(8, (2, 3, 4), (4, 5))),
        "exp": (ag.exp, _case(9, (2, 3))),
        "log": (ag.log, _case(10, (2, 3), positive=True)),
        "sum": (lambda a: ag.sum_(a, axis=1, keepdims=True), _case(11, (3, 4, 2))),
        "mean": (lambda a: ag.mean(a, axis=(0, 2)), _case(12, (3, 4, 2))),
        "reshape": (lambda a: ag.reshape(a, (4, 3)), _case(13, (2, 6))),
        "transpose": (lambda a: ag.transpose(a, (2, 0, 1)), _case(14, (2, 3, 4))),
        "getitem": (lambda a: ag.getitem(a, (slice(None), np.array([2, 0, 2]))), _case(15, (3, 4))),
        "concat": (lambda a, b: ag.concat([a, b], axis=1), _case(16, (2, 3, 2), (2, 1, 2))),
        "stack": (lambda a, b: ag.stack([a, b], axis=1), _case(17, (2, 3), (2, 3))),
        "relu": (ag.relu, [Tensor(rng.normal(size=(4, 5)) + 0.05, requires_grad=True)]),
        "sigmoid": (ag.sigmoid, _case(18, (3, 4))),
        "tanh": (ag.tanh, _case(19, (3, 4))),
        "softmax": (lambda a: ag.softmax(a, mask=mask), _case(20, (2, 4))),
        "log_softmax": (ag.log_softmax, _case(21, (2, 3, 5))),
        "linear": (ag.linear, _case(22, (2, 3, 4), (5, 4), (5,))),
        "mix": (lambda a, b, c, w: ag.mix([a, b, c], w, [0, 2, 3]), _case(23, (2, 3), (2, 3), (2, 3), (4,))),
        "batch_norm": (lambda x, g, b: ag.batch_norm(x, g, b, *bn_state(3), training=True),
                       _case(24, (2, 3, 3, 2), (3,), (3,))),
        "lstm_cell": (ag.lstm_cell, _case(25, (2, 3), (2, 4), (2, 4), (16, 3), (16, 4), (16,))),
        "conv2d": (lambda x, w, b: ag.conv2d(x, w, b), _case(26, (2, 2, 5, 4), (3, 2, 3, 3), (3,))),
        "conv2d_dilated": (lambda x, w: ag.conv2d(x, w, dilation=2), _case(27, (1, 2, 6, 5), (2, 2, 5, 5))),
        "conv2d_direct": (lambda x, w, b: ag.conv2d(x, w, b, dilation=2, backend="direct"),
                          _case(28, (1, 2, 5, 5), (2, 2, 3, 3), (2,))),
        "avg_pool2d": (lambda x: ag.pool2d(x, "avg"), _case(29, (2, 2, 4, 5))),
        "max_pool2d": (lambda x: ag.pool2d(x, "max"), _case(30, (2, 2, 4, 5))),
        "max_pool_downsample": (ag.max_pool_downsample, _case(31, (1, 2, 5, 3))),
    }
    out = {name: (_scalarize(fn, i), xs) for i, (name, (fn, xs)) in enumerate(cases.items())}

    lp_raw = Tensor(np.random.default_rng(32).normal(size=(6, 4)), requires_grad=True)
    out["ctc_loss"] = (lambda a: ctc_loss(ag.log_softmax(a), [1, 3, 3]), [lp_raw])
    return out


def _composite_case():
    cfg = ModelConfig(frontend="darts", cell=CellConfig(k=2, channels=2), lstm_layers=1, lstm_hidden=3,
                      feature_dim=3, projection_dim=4)
    model = SequenceModel(cfg, seed=3)
    head = model.add_head("t", ["<blank>", "a", "b"])
    rng = np.random.default_rng(33)
    feats = Tensor(rng.normal(size=(2, 1, 5, 3)), requires_grad=True)
    lengths = np.array([5, 4])
    targets = [[1, 2], [2]]
    params = [model.alphas.alpha, model.stem.weight, model.proj.weight, head.linear.weight]

    def f(x, *_):
        enc = encode(model, x, lengths, "train")
        return ctc_loss_batch(head_forward(head, enc), enc.lengths, targets)

    # batch-norm running statistics change on every forward; they do not enter the train-mode output
    return f, [feats] + params


def _sabotaged(f: Callable, op: str) -> Callable:
    """Wrap ``f`` so backward rules of nodes tagged ``op`` return slightly wrong gradients."""
    def g(*xs):
        out = f(*xs)
        if ag.is_grad_enabled():
            for node in Tape(out).entries:
                if node._op == op:
                    inner = node._backward
                    node._backward = lambda grad, inner=inner: tuple(
                        None if r is None else 1.01 * r for r in inner(grad))
        return out
    return g


def run_suite(tol: float = 1e-4, sabotage: Optional[str] = None, include_composite: bool = True) -> list:
    """Check every primitive once; ``sabotage`` names an op tag to corrupt on purpose."""
    cases = _primitive_cases()
    if include_composite:
        cases["composite"] = _composite_case()
    results = []
    for name, (f, xs) in cases.items():
        if sabotage is not None:
            f = _sabotaged(f, sabotage)
        rep = grad_check(f, xs, tol=tol)
        results.append(CheckResult(name, rep.max_error, rep.passed))
    return results


def primitive_ops() -> list:
    return sorted({n._op for f, xs in _primitive_cases().values() for n in Tape(f(*xs)).entries})
