"""Linear probing of frozen features: a linear classifier trained with AdamW.

The probe measures how linearly separable a feature space is. Weights and
bias start at zero, so the initial loss of a C-class problem is exactly
ln C, and the whole run is bit-deterministic given the seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import InputError
from .validation import (
    as_f32,
    as_labels,
    check_feature_dim,
    check_finite,
    check_labels_in_range,
)

LOG_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise InputError(f"learning_rate must be > 0, got {self.learning_rate}")
        return self


@dataclass
class AdamWState:
    """First/second-moment accumulators (kept in float64) and step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamWState":
        return cls(
            m=[np.zeros(p.shape, dtype=np.float64) for p in params],
            v=[np.zeros(p.shape, dtype=np.float64) for p in params],
        )


def forward(weights: np.ndarray, bias: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Logits [B, C] = features @ W.T + b."""
    features = as_f32(features, 2, "features")
    check_feature_dim(features, weights.shape[1])
    return (features @ weights.T + bias).astype(np.float32)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-stabilized softmax; preserves the ordering of the logits."""
    logits = np.asarray(logits, dtype=np.float32)
    check_finite(logits, "logits")
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of -log(p[label]) with the log floored at 1e-12.

    Per-example terms are float32; the batch mean accumulates in float64 and
    is rounded back to float32, which keeps the zero-model loss at exactly
    ln C.
    """
    probs = as_f32(probs, 2, "probs")
    labels = as_labels(labels)
    if probs.shape[0] != labels.shape[0]:
        raise InputError(f"{probs.shape[0]} prob rows but {labels.shape[0]} labels")
    check_labels_in_range(labels, probs.shape[1])
    picked = probs[np.arange(probs.shape[0]), labels]
    terms = -np.log(np.maximum(picked, np.float32(LOG_FLOOR)))
    return float(np.float32(terms.mean(dtype=np.float64)))


def gradient(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of the mean cross-entropy: dlogits = softmax - onehot."""
    features = as_f32(features, 2, "features")
    labels = as_labels(labels)
    probs = softmax(forward(weights, bias, features))
    check_labels_in_range(labels, weights.shape[0])
    batch = features.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= np.float32(batch)
    return (dlogits.T @ features).astype(np.float32), dlogits.sum(axis=0).astype(np.float32)


def adamw_step(params, state: AdamWState, grads, config: TrainConfig):
    """One decoupled-weight-decay Adam update.

    Moment math runs in float64; updated parameters come back in each input
    parameter's own dtype.
    """
    state = AdamWState(m=[m.copy() for m in state.m], v=[v.copy() for v in state.v],
                       t=state.t + 1)
    t = state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g64 = np.asarray(g, dtype=np.float64)
        p64 = np.asarray(p, dtype=np.float64)
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g64
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g64 * g64
        m_hat = state.m[i] / (1.0 - config.beta1**t)
        v_hat = state.v[i] / (1.0 - config.beta2**t)
        step = config.learning_rate * (
            m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * p64
        )
        out.append((p64 - step).astype(np.asarray(p).dtype))
    return out, state


def topk_accuracy(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    k: int,
) -> float:
    """Fraction of examples whose label is among the k largest logits.

    Ties rank the lower class index first (stable sort on descending logits).
    """
    num_classes = weights.shape[0]
    if not 1 <= k <= num_classes:
        raise InputError(f"k must be in [1, {num_classes}], got {k}")
    labels = as_labels(labels)
    logits = forward(weights, bias, features)
    topk = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hits = (topk == labels[:, None]).any(axis=1)
    return float(hits.mean()) if len(labels) else 0.0


def train(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: TrainConfig,
    val_features: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
):
    """Train a zero-initialized probe; returns (weights, bias, history).

    History holds one {epoch, train_loss, val_top1} record per epoch, with
    the train loss averaged over that epoch's minibatches as seen during
    the pass.
    """
    config.validate()
    features = check_finite(as_f32(features, 2, "features"), "features")
    labels = as_labels(labels)
    n, dim = features.shape
    if n == 0:
        raise InputError("cannot train on an empty dataset")
    if labels.shape[0] != n:
        raise InputError(f"{n} feature rows but {labels.shape[0]} labels")
    if num_classes < 2:
        raise InputError(f"need at least 2 classes, got {num_classes}")
    check_labels_in_range(labels, num_classes)

    weights = np.zeros((num_classes, dim), dtype=np.float32)
    bias = np.zeros(num_classes, dtype=np.float32)
    state = AdamWState.for_params([weights, bias])
    rng = np.random.default_rng(config.seed)

    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = features[idx], labels[idx]
            probs = softmax(forward(weights, bias, xb))
            loss_sum += cross_entropy(probs, yb) * len(idx)
            grads = gradient(weights, bias, xb, yb)
            (weights, bias), state = adamw_step([weights, bias], state, grads, config)
        record = {"epoch": epoch, "train_loss": loss_sum / n, "val_top1": None}
        if val_features is not None and val_labels is not None:
            record["val_top1"] = topk_accuracy(weights, bias, val_features, val_labels, 1)
        history.append(record)
    return weights, bias, history


class LinearProbe(BaseEstimator, ClassifierMixin):
    """Frozen-feature linear classifier with the sklearn estimator API.

    Defaults follow the standard probing recipe: 10 epochs, batch size 128,
    learning rate 1e-3, AdamW with zero weight decay.
    """

    def __init__(
        self,
        epochs=10,
        batch_size=128,
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        weight_decay=0.0,
        seed=0,
        shuffle=True,
        num_classes=None,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.seed = seed
        self.shuffle = shuffle
        self.num_classes = num_classes

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            seed=self.seed,
            shuffle=self.shuffle,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        y = as_labels(y)
        c = self.num_classes if self.num_classes is not None else int(y.max()) + 1
        self.coef_, self.intercept_, self.history_ = train(
            X, y, c, self._config(), val_features=X_val, val_labels=y_val
        )
        self.classes_ = np.arange(c)
        return self

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        return forward(self.coef_, self.intercept_, X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    def topk_score(self, X, y, k: int) -> float:
        self._check_fitted()
        return topk_accuracy(self.coef_, self.intercept_, X, y, k)

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise InputError("probe is not fitted; call fit(X, y) first")
