"""Training losses with explicit gradients.

All reductions are means over every element (MSE, L1) or over the batch
(cross entropy), so loss magnitudes do not depend on image resolution.
"""
from __future__ import annotations

import numpy as np

from .tensorops import ShapeError

__all__ = [
    "mse_loss",
    "mse_loss_grad",
    "l1_loss",
    "l1_loss_grad",
    "softmax",
    "softmax_cross_entropy",
    "softmax_cross_entropy_grad",
    "one_hot",
]


def _check_same_shape(pred: np.ndarray, target: np.ndarray, op: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: prediction shape {pred.shape} does not match "
                         f"target shape {target.shape}")


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over all elements of the squared difference."""
    _check_same_shape(pred, target, "mse_loss")
    diff = pred - target
    return float(np.mean(diff * diff))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d mse / d pred = 2 (pred - target) / n."""
    _check_same_shape(pred, target, "mse_loss")
    return (2.0 / pred.size) * (pred - target)


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute difference."""
    _check_same_shape(pred, target, "l1_loss")
    return float(np.mean(np.abs(pred - target)))


def l1_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d l1 / d pred = sign(pred - target) / n, with sign(0) = 0."""
    _check_same_shape(pred, target, "l1_loss")
    return np.sign(pred - target) / pred.size


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction stabilization."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_one_hot(labels: np.ndarray, logits: np.ndarray) -> None:
    if labels.shape != logits.shape:
        raise ShapeError(f"labels shape {labels.shape} does not match logits "
                         f"shape {logits.shape}")
    is_binary = np.all((labels == 0) | (labels == 1))
    rows_sum_one = np.all(labels.sum(axis=1) == 1)
    if not (is_binary and rows_sum_one):
        raise ValueError("labels must be one-hot rows (exactly one 1 per row)")


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -sum_k y_k log softmax(logits)_k.

    ``labels`` must be one-hot rows. Stable for extreme logits.
    """
    _check_one_hot(labels, logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = (shifted * labels).sum(axis=1)
    return float(np.mean(log_z - picked))


def softmax_cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d ce / d logits = (softmax(logits) - labels) / N."""
    _check_one_hot(labels, logits)
    return (softmax(logits) - labels) / logits.shape[0]


def one_hot(classes: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """Encode integer class indices as one-hot rows."""
    classes = np.asarray(classes)
    if classes.ndim != 1:
        raise ShapeError(f"class indices must be 1D, got shape {classes.shape}")
    if np.any((classes < 0) | (classes >= num_classes)):
        raise ValueError(f"class indices must lie in [0, {num_classes})")
    out = np.zeros((classes.size, num_classes), dtype=dtype)
    out[np.arange(classes.size), classes] = 1
    return out
