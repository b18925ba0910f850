"""Linear one-vs-all SVMs trained by averaged stochastic subgradient descent."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class LinearOvrModel:
    weights: np.ndarray  # n_classes x feature_dim
    biases: np.ndarray
    reg_c: float
    class_labels: tuple
    objective_history: tuple = field(default=(), compare=False, repr=False)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, (list, tuple)) and x and hasattr(x[0], "vector"):
        x = np.stack([r.vector for r in x])
    return np.asarray(x, dtype=np.float64)


def hinge_objective(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray, lam: float) -> float:
    """Sum over classes of ``lam/2 ||[w, b]||^2 + mean(max(0, 1 - y (w.x + b)))``."""
    margins = Y * (X @ W.T + b)
    hinge = np.maximum(0.0, 1.0 - margins).mean(axis=0)
    return float(np.sum(0.5 * lam * (np.sum(W * W, axis=1) + b * b) + hinge))


def train_ovr(
    X,
    labels: Sequence,
    reg_c: float = 100.0,
    epochs: int = 30,
    seed: int = 0,
) -> LinearOvrModel:
    """Train one hinge-loss linear model per class against the rest.

    Each binary problem minimises ``lam/2 ||w||^2 + mean_i hinge_i`` with
    ``lam = 1 / reg_c`` (equivalently ``C = reg_c / n`` in the usual primal).
    Updates follow the Pegasos step ``1 / (lam t)``; the returned weights are
    the average of the iterates over the second half of training. The bias is
    learned as the weight of a constant feature. All classes share one
    fixed-seed sample order, so training is bit-for-bit reproducible.
    """
    X = _as_matrix(X)
    labels = list(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise ShapeError(f"{len(labels)} labels for data of shape {X.shape}")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ConfigurationError("one-vs-all training needs at least two classes")
    if reg_c <= 0 or epochs < 1:
        raise ConfigurationError("reg_c and epochs must be positive")
    n, d = X.shape
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in labels])
    Y = -np.ones((n, len(classes)))
    Y[np.arange(n), y] = 1.0
    Xa = np.hstack([X, np.ones((n, 1))])

    lam = 1.0 / reg_c
    W = np.zeros((len(classes), d + 1))
    avg = np.zeros_like(W)
    n_avg = 0
    rng = np.random.default_rng(seed)
    history = [hinge_objective(W[:, :d], W[:, d], X, Y, lam)]
    t = 0
    start_avg = epochs // 2
    radius = 1.0 / np.sqrt(lam)
    for epoch in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            xi, yi = Xa[i], Y[i]
            viol = yi * (W @ xi) < 1.0
            W *= 1.0 - eta * lam
            W[viol] += eta * yi[viol, None] * xi[None, :]
            norms = np.sqrt(np.sum(W * W, axis=1))
            over = norms > radius
            W[over] *= (radius / norms[over])[:, None]
            if epoch >= start_avg:
                n_avg += 1
                avg += (W - avg) / n_avg
        cur = avg if n_avg else W
        history.append(hinge_objective(cur[:, :d], cur[:, d], X, Y, lam))
    return LinearOvrModel(
        weights=avg[:, :d].copy(),
        biases=avg[:, d].copy(),
        reg_c=reg_c,
        class_labels=classes,
        objective_history=tuple(history),
    )


def predict_scores(m: LinearOvrModel, x) -> np.ndarray:
    """``w_c . x + b_c`` for one vector (or each row of a matrix)."""
    x = _as_matrix(x)
    if x.shape[-1] != m.feature_dim:
        raise ShapeError(f"feature dim {x.shape[-1]} != model dim {m.feature_dim}")
    return x @ m.weights.T + m.biases


def predict(m: LinearOvrModel, x) -> list:
    """Highest-scoring label per row; ties go to the earlier class."""
    scores = np.atleast_2d(predict_scores(m, x))
    return [m.class_labels[i] for i in np.argmax(scores, axis=1)]


@dataclass
class Metrics:
    accuracy: float
    labels: tuple
    confusion: np.ndarray  # rows: true class, columns: predicted class
    correct: np.ndarray
    total: np.ndarray

    @property
    def per_class_accuracy(self) -> dict:
        return {
            c: (float(k / t) if t else 0.0)
            for c, k, t in zip(self.labels, self.correct, self.total)
        }


def metrics_from_predictions(true, predicted, labels: Sequence) -> Metrics:
    labels = tuple(labels)
    if not len(true):
        raise ShapeError("empty test set")
    index = {c: i for i, c in enumerate(labels)}
    conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(true, predicted):
        conf[index[t], index[p]] += 1
    correct = np.diag(conf).copy()
    total = conf.sum(axis=1)
    return Metrics(
        accuracy=float(correct.sum() / total.sum()),
        labels=labels,
        confusion=conf,
        correct=correct,
        total=total,
    )


def evaluate(m: LinearOvrModel, X, labels: Sequence) -> Metrics:
    return metrics_from_predictions(list(labels), predict(m, X), m.class_labels)
