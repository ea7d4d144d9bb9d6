"""scikit-learn style facade over search, prediction and architecture export."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .autograd import no_grad
from .cell import derive_architecture
from .config import OPTIM_PRESETS
from .ctc import edit_distance, greedy_decode
from .data import TaskData, Utterance, make_batches, make_vocab
from .model import PRESETS, SequenceModel, encode, head_forward
from .trainer import TrainConfig, search


def check_sequences(X, y=None, feature_dim: Optional[int] = None):
    """Validate a ragged batch of ``[T, D]`` feature matrices and optional label sequences."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0:
        raise ValueError("need at least one sequence")
    Xs = [check_array(x, dtype=np.float64, ensure_2d=True, ensure_min_samples=1) for x in X]
    dims = {x.shape[1] for x in Xs}
    if len(dims) != 1:
        raise ValueError(f"all sequences must share a feature dimension, got {sorted(dims)}")
    if feature_dim is not None and dims != {feature_dim}:
        raise ValueError(f"expected {feature_dim} features per frame, got {dims.pop()}")
    if y is None:
        return Xs
    if len(y) != len(Xs):
        raise ValueError(f"{len(Xs)} sequences but {len(y)} label sequences")
    ys = []
    for seq in y:
        arr = np.asarray(seq)
        if arr.ndim != 1 or (arr.size and not np.issubdtype(arr.dtype, np.integer)):
            raise ValueError("labels must be 1-D integer sequences")
        if arr.size and arr.min() < 1:
            raise ValueError("label 0 is reserved for the CTC blank")
        ys.append([int(v) for v in arr])
    return Xs, ys


class DartsRecognizer(BaseEstimator):
    """CTC sequence recognizer whose convolutional frontend is found by differentiable search.

    ``fit`` runs joint weight/alpha training; ``predict`` returns greedy label
    sequences; ``score`` is ``1 - CER``.  Labels are integers ``>= 1`` (0 is blank).
    """

    def __init__(self, preset: str = "desk", frontend: str = "darts", k: Optional[int] = None,
                 channels: Optional[int] = None, max_epochs: int = 15, batch_size: int = 16,
                 alpha_lr: Optional[float] = None, weight_lr: Optional[float] = None,
                 freeze_alphas: bool = False, validation_fraction: float = 0.1, random_state: int = 0):
        self.preset = preset
        self.frontend = frontend
        self.k = k
        self.channels = channels
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.alpha_lr = alpha_lr
        self.weight_lr = weight_lr
        self.freeze_alphas = freeze_alphas
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_config(self, feature_dim: int):
        base = PRESETS[self.preset]
        cell = base.cell
        if self.k is not None:
            cell = replace(cell, k=self.k)
        if self.channels is not None:
            cell = replace(cell, channels=self.channels)
        return replace(base, frontend=self.frontend, cell=cell, feature_dim=feature_dim)

    def _train_config(self) -> TrainConfig:
        optim = OPTIM_PRESETS[self.preset]
        if self.alpha_lr is not None:
            optim = replace(optim, alpha_lr=self.alpha_lr)
        if self.weight_lr is not None:
            optim = replace(optim, weight_lr=self.weight_lr)
        return TrainConfig(optim=optim, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           freeze_alphas=self.freeze_alphas, seed=self.random_state)

    def fit(self, X, y, X_val=None, y_val=None):
        Xs, ys = check_sequences(X, y)
        self.n_features_in_ = Xs[0].shape[1]
        n_labels = max((max(s) for s in ys if s), default=1)
        if X_val is not None:
            Xv, yv = check_sequences(X_val, y_val, self.n_features_in_)
            n_labels = max([n_labels] + [max(s) for s in yv if s])
        self.vocab_ = make_vocab(n_labels + 1)
        utts = [Utterance(f"u{i:06d}", x, s) for i, (x, s) in enumerate(zip(Xs, ys))]
        if X_val is not None:
            val = [Utterance(f"v{i:06d}", x, s) for i, (x, s) in enumerate(zip(Xv, yv))]
            train = utts
        else:
            if not 0 < self.validation_fraction < 1:
                raise ValueError("validation_fraction must be in (0, 1) when no validation set is given")
            order = np.random.default_rng(self.random_state).permutation(len(utts))
            n_val = max(1, int(round(self.validation_fraction * len(utts))))
            if n_val >= len(utts):
                raise ValueError("too few sequences to hold out a validation split")
            val = [utts[i] for i in order[:n_val]]
            train = [utts[i] for i in order[n_val:]]
        task = TaskData("task", self.vocab_, train, val, [])
        self.model_ = SequenceModel(self._model_config(self.n_features_in_), self.random_state)
        result = search(self.model_, task, self._train_config())
        self.history_ = result.history
        return self

    def predict_log_proba(self, X) -> list:
        """Per-frame log-probabilities, one ``[T', V]`` array per sequence."""
        check_is_fitted(self, "model_")
        Xs = check_sequences(X, feature_dim=self.n_features_in_)
        utts = [Utterance(f"x{i:06d}", x, []) for i, x in enumerate(Xs)]
        out = [None] * len(utts)
        self.model_.eval()
        with no_grad():
            for batch in make_batches(utts, self.batch_size, shuffle=False):
                enc = encode(self.model_, batch.features, batch.lengths)
                lp = head_forward(self.model_.heads["task"], enc).data
                for n, uid in enumerate(batch.ids):
                    out[int(uid[1:])] = lp[n, :enc.lengths[n]].copy()
        return out

    def predict(self, X) -> list:
        return [greedy_decode(lp) for lp in self.predict_log_proba(X)]

    def score(self, X, y) -> float:
        Xs, ys = check_sequences(X, y, getattr(self, "n_features_in_", None))
        hyps = self.predict(Xs)
        total = sum(len(r) for r in ys)
        if total == 0:
            raise ValueError("references are all empty")
        return 1.0 - sum(edit_distance(h, r) for h, r in zip(hyps, ys)) / total

    def derive_architecture(self):
        check_is_fitted(self, "model_")
        if self.model_.alphas is None:
            raise AttributeError("the VGG frontend has no architecture parameters")
        return derive_architecture(self.model_.alphas, self.model_.config.cell)

    @property
    def alphas_(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        if self.model_.alphas is None:
            raise AttributeError("the VGG frontend has no architecture parameters")
        return self.model_.alphas.values.copy()
