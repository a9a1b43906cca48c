"""Scikit-learn style wrapper around the state-space classifier stack.

`SSMClassifier` exposes fit/predict/predict_proba/score over integer
token sequences, so the stack drops into sklearn pipelines, grid
searches, and `clone`. Hyperparameters mirror the training config keys
one to one; everything learned lives in attributes with a trailing
underscore.

Inputs are token id sequences, not feature matrices: a 2-D integer
array means equal-length sequences, a list of 1-D arrays means ragged
ones (right-padded internally, padding excluded from pooling).
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from . import learn
from .scaffold import stack_forward
from .tasks import Dataset
from .training import _batches, build_stack
from .types import ValidationError

__all__ = ["SSMClassifier"]


def _as_sequences(X):
    """Normalize X to a list of 1-D int64 token arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        seqs = [np.asarray(row) for row in X]
    else:
        seqs = [np.asarray(s) for s in X]
    if not seqs:
        raise ValidationError("X is empty")
    out = []
    for i, s in enumerate(seqs):
        if s.ndim != 1 or s.size == 0:
            raise ValidationError(f"sequence {i} is not a nonempty 1-D array")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(s == np.floor(s)):
                raise ValidationError(f"sequence {i} has non-integer tokens")
        s = s.astype(np.int64)
        if s.min() < 0:
            raise ValidationError(f"sequence {i} has negative token ids")
        out.append(s)
    return out


class SSMClassifier(BaseEstimator, ClassifierMixin):
    """Sequence classifier built from gated state-space layers.

    Parameters map onto the run-config schema: `model_kind` picks the
    recurrence (s4, s4d, s5, lru, s6, rglru), `scaffold_kind` the block
    wiring (mlp, h3, mamba), and the rest are the usual size and
    optimizer knobs. `vocab_size=None` infers max token id + 1 from the
    training data.
    """

    def __init__(self, model_kind="s4d", scaffold_kind="mlp", p=16, q=8,
                 n_layers=2, vocab_size=None, pooling="mean", norm=True,
                 lr=1e-3, dynamics_lr_scale=0.1, clip_norm=1.0, steps=200,
                 batch_size=32, seed=0, workers=None):
        self.model_kind = model_kind
        self.scaffold_kind = scaffold_kind
        self.p = p
        self.q = q
        self.n_layers = n_layers
        self.vocab_size = vocab_size
        self.pooling = pooling
        self.norm = norm
        self.lr = lr
        self.dynamics_lr_scale = dynamics_lr_scale
        self.clip_norm = clip_norm
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed
        self.workers = workers

    def _config(self):
        return {
            "seed": int(self.seed),
            "model": {"kind": self.model_kind, "p": int(self.p),
                      "q": int(self.q), "n_layers": int(self.n_layers)},
            "scaffold": {"kind": self.scaffold_kind, "norm": bool(self.norm)},
            "head": {"pooling": self.pooling},
            "optimizer": {"lr": float(self.lr),
                          "dynamics_lr_scale": float(self.dynamics_lr_scale),
                          "clip_norm": self.clip_norm},
        }

    def _dataset(self, seqs, labels):
        return Dataset(task="arrays", vocab_size=self.vocab_size_,
                       n_classes=len(self.classes_), sequences=seqs,
                       labels=labels, pad_id=0)

    def fit(self, X, y):
        seqs = _as_sequences(X)
        y = np.asarray(y)
        if y.shape != (len(seqs),):
            raise ValidationError("y must be 1-D with one label per sequence")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValidationError("need at least two classes to fit")

        top = int(max(s.max() for s in seqs))
        if self.vocab_size is None:
            self.vocab_size_ = top + 1
        else:
            self.vocab_size_ = int(self.vocab_size)
            if top >= self.vocab_size_:
                raise ValidationError(
                    f"token id {top} outside vocab_size={self.vocab_size_}")

        ds = self._dataset(seqs, y_idx)
        self.stack_, self.store_ = build_stack(
            self._config(), self.vocab_size_, len(self.classes_))
        state = learn.AdamState(lr=float(self.lr),
                                clip_norm=self.clip_norm)
        batch_rng = np.random.default_rng((int(self.seed), 999))

        step = 0
        while step < int(self.steps):
            for ids, mask, labels in _batches(ds, int(self.batch_size),
                                              rng=batch_rng):
                if step >= int(self.steps):
                    break

                def loss_fn():
                    logits = stack_forward(self.stack_, ids, mask=mask,
                                           workers=self.workers)
                    return learn.cross_entropy(logits, labels)

                loss, _ = learn.grad(loss_fn, self.store_)
                learn.adam_step(self.store_, state)
                step += 1
        self.n_steps_ = step
        return self

    def _check_fitted(self):
        if not hasattr(self, "stack_"):
            raise NotFittedError(
                "this SSMClassifier instance is not fitted yet; "
                "call fit before predict")

    def _logits(self, X):
        self._check_fitted()
        seqs = _as_sequences(X)
        top = int(max(s.max() for s in seqs))
        if top >= self.vocab_size_:
            raise ValidationError(
                f"token id {top} outside fitted vocab_size={self.vocab_size_}")
        ds = self._dataset(seqs, np.zeros(len(seqs), dtype=np.int64))
        chunks = []
        for ids, mask, _ in _batches(ds, 256):
            chunks.append(np.asarray(ad.val(
                stack_forward(self.stack_, ids, mask=mask,
                              workers=self.workers))))
        # _batches sorts by length; undo that to line up with the input
        srt = np.argsort(np.array([len(s) for s in seqs]), kind="stable")
        logits = np.concatenate(chunks, axis=0)
        out = np.empty_like(logits)
        out[srt] = logits
        return out

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[np.argmax(z, axis=-1)]

    def predict_proba(self, X):
        z = self._logits(X)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def accuracy(self, X, y):
        """Plain argmax accuracy; `score` from ClassifierMixin matches."""
        return float(np.mean(self.predict(X) == np.asarray(y)))
