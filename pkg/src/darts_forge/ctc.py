"""CTC loss (log-domain forward-backward), brute-force oracle, greedy decoding, CER.

The blank label is always index 0.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .autograd import Tensor, as_tensor
from .autograd.tensor import make_result

BLANK = 0
NEG_INF = -np.inf


class CTCInfeasibleError(ValueError):
    """The target cannot be aligned to the given number of frames."""


def required_frames(target: Sequence[int]) -> int:
    """Minimum number of frames for a CTC alignment of ``target``."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _validate(lp: np.ndarray, target: Sequence[int]) -> np.ndarray:
    if lp.ndim != 2:
        raise ValueError(f"logprobs must be [T, V], got shape {lp.shape}")
    tgt = np.asarray(list(target), dtype=np.int64)
    V = lp.shape[1]
    if tgt.size and (tgt.min() < 1 or tgt.max() >= V):
        raise ValueError(f"target labels must lie in [1, {V - 1}] (0 is blank)")
    need = required_frames(tgt)
    if lp.shape[0] < need:
        raise CTCInfeasibleError(f"target of length {tgt.size} needs {need} frames, got {lp.shape[0]}")
    return tgt


def _extended(tgt: np.ndarray) -> tuple:
    S = 2 * tgt.size + 1
    ext = np.zeros(S, dtype=np.int64)
    ext[1::2] = tgt
    skip = np.zeros(S, dtype=bool)
    if S > 3:
        skip[3::2] = tgt[1:] != tgt[:-1]
    return ext, skip


def _shift(a: np.ndarray, n: int) -> np.ndarray:
    out = np.full_like(a, NEG_INF)
    out[n:] = a[:-n] if n < a.size else out[n:]
    return out


def ctc_lattice(lp: np.ndarray, target: Sequence[int]) -> tuple:
    """Forward log-alphas ``[T, 2L+1]`` and the log-likelihood of ``target``."""
    tgt = _validate(lp, target)
    ext, skip = _extended(tgt)
    T, S = lp.shape[0], ext.size
    la = np.full((T, S), NEG_INF)
    la[0, 0] = lp[0, BLANK]
    if S > 1:
        la[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        prev = la[t - 1]
        two = np.where(skip, _shift(prev, 2), NEG_INF)
        la[t] = np.logaddexp(np.logaddexp(prev, _shift(prev, 1)), two) + lp[t, ext]
    ll = la[T - 1, S - 1] if S == 1 else np.logaddexp(la[T - 1, S - 1], la[T - 1, S - 2])
    return la, float(ll), ext, skip


def _log_betas(lp: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    T, S = lp.shape[0], ext.size
    lb = np.full((T, S), NEG_INF)
    lb[T - 1, S - 1] = lp[T - 1, ext[S - 1]]
    if S > 1:
        lb[T - 1, S - 2] = lp[T - 1, ext[S - 2]]
    # skip[s + 2] says whether s may jump to s + 2
    skip_from = np.zeros(S, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = lb[t + 1]
        one = np.full(S, NEG_INF)
        one[:-1] = nxt[1:]
        two = np.full(S, NEG_INF)
        two[:-2] = nxt[2:]
        two = np.where(skip_from, two, NEG_INF)
        lb[t] = np.logaddexp(np.logaddexp(nxt, one), two) + lp[t, ext]
    return lb


def _ctc_value_and_grad(lp: np.ndarray, target: Sequence[int]) -> tuple:
    la, ll, ext, skip = ctc_lattice(lp, target)
    if not np.isfinite(ll):
        return np.inf, np.zeros_like(lp)
    lb = _log_betas(lp, ext, skip)
    gamma = la + lb - lp[:, ext]
    occ = np.exp(gamma - ll)
    grad = np.zeros_like(lp)
    np.add.at(grad, (slice(None), ext), -occ)
    return -ll, grad


def ctc_loss(logprobs, target: Sequence[int]) -> Tensor:
    """Negative log-likelihood of ``target`` under per-frame log-probabilities ``[T, V]``."""
    logprobs = as_tensor(logprobs)
    value, grad = _ctc_value_and_grad(logprobs.data, target)
    return make_result(np.array(value), (logprobs,), lambda g: (g * grad,), "ctc_loss")


def ctc_loss_batch(logprobs, lengths: Sequence[int], targets: Sequence[Sequence[int]],
                   reduction: str = "mean") -> Tensor:
    """Per-utterance CTC over ``[N, T, V]``, frames past ``lengths[n]`` ignored."""
    logprobs = as_tensor(logprobs)
    N = logprobs.shape[0]
    if len(lengths) != N or len(targets) != N:
        raise ValueError("lengths and targets must have one entry per utterance")
    losses = np.zeros(N)
    grads = np.zeros_like(logprobs.data)
    for n in range(N):
        L = int(lengths[n])
        if L < 1 or L > logprobs.shape[1]:
            raise ValueError(f"utterance {n}: invalid length {L}")
        losses[n], grads[n, :L] = _ctc_value_and_grad(logprobs.data[n, :L], targets[n])
    if reduction == "mean":
        value, scale = losses.mean(), 1.0 / N
    elif reduction == "sum":
        value, scale = losses.sum(), 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    out = make_result(np.array(value), (logprobs,), lambda g: (g * scale * grads,), "ctc_loss")
    out.name = "ctc"
    return out


def per_utterance_losses(logprobs: np.ndarray, lengths, targets) -> np.ndarray:
    return np.array([_ctc_value_and_grad(logprobs[n, :int(lengths[n])], targets[n])[0]
                     for n in range(len(targets))])


def collapse(path: Sequence[int]) -> list:
    """Merge adjacent repeats, then drop blanks."""
    out, prev = [], None
    for p in path:
        if p != prev and p != BLANK:
            out.append(int(p))
        prev = p
    return out


def ctc_bruteforce(logprobs, target: Sequence[int], max_frames: int = 8) -> float:
    """Loss by enumerating every length-T path (test oracle)."""
    lp = np.asarray(logprobs.data if isinstance(logprobs, Tensor) else logprobs, dtype=np.float64)
    T, V = lp.shape
    if T > max_frames:
        raise ValueError(f"brute force limited to T <= {max_frames}, got {T}")
    target = [int(t) for t in target]
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if collapse(path) == target:
            total += float(np.exp(sum(lp[t, p] for t, p in enumerate(path))))
    return -np.log(total) if total > 0 else np.inf


def greedy_decode(logprobs) -> list:
    lp = logprobs.data if isinstance(logprobs, Tensor) else np.asarray(logprobs)
    return collapse(np.argmax(lp, axis=-1).tolist())


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def cer(hyp: Sequence[int], ref: Sequence[int]) -> float:
    """Character error rate in percent."""
    if len(ref) == 0:
        raise ValueError("CER is undefined for an empty reference")
    return 100.0 * edit_distance(hyp, ref) / len(ref)
