"""Classification objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, cross_entropy

PROB_FLOOR = 1e-12


@dataclass
class CeaTerms:
    ce_loss: float
    accuracy: float
    cea_loss: float


def cea_loss_value(probabilities, true_onehot, pred_onehot, alpha: float = 0.1) -> CeaTerms:
    """Cross-entropy-with-accuracy on explicit softmax outputs.

    ``CE`` is the mean of ``-ln s_true`` (probabilities clamped at 1e-12),
    ``Acc`` the mean of ``y . p`` over the batch, and the loss is
    ``1 + alpha * CE - Acc``.
    """
    s = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    y = np.atleast_2d(np.asarray(true_onehot, dtype=np.float64))
    p = np.atleast_2d(np.asarray(pred_onehot, dtype=np.float64))
    if not (s.shape == y.shape == p.shape):
        raise ValueError("probabilities, true and predicted one-hot arrays must share a shape")
    if s.shape[0] < 1:
        raise ValueError("empty batch")
    s_true = np.maximum((s * y).sum(axis=1), PROB_FLOOR)
    ce = float(np.mean(-np.log(s_true)))
    acc = float(np.mean((y * p).sum(axis=1)))
    return CeaTerms(ce, acc, 1.0 + alpha * ce - acc)


def cea_loss(probabilities, true_onehot, pred_onehot, alpha: float = 0.1) -> float:
    return cea_loss_value(probabilities, true_onehot, pred_onehot, alpha).cea_loss


def onehot(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def classification_loss(logits: Tensor, targets, kind: str = "ce", alpha: float = 0.1,
                        sample_weight=None) -> Tensor:
    """Differentiable training loss.

    ``kind="cea"`` adds the constant ``1 - Acc`` (argmax accuracy of the
    batch) to ``alpha * CE``; the accuracy term carries no gradient.
    """
    ce = cross_entropy(logits, targets, sample_weight)
    if kind == "ce":
        return ce
    if kind != "cea":
        raise ValueError(f"unknown loss {kind!r}; expected 'ce' or 'cea'")
    acc = float(np.mean(logits.data.argmax(axis=1) == np.asarray(targets)))
    return ce * alpha + (1.0 - acc)


def loss_value(probabilities: np.ndarray, targets, kind: str = "ce", alpha: float = 0.1) -> float:
    """Evaluation-time value of the configured loss over a whole set."""
    targets = np.asarray(targets, dtype=np.int64)
    c = probabilities.shape[1]
    pred = probabilities.argmax(axis=1)
    terms = cea_loss_value(probabilities, onehot(targets, c), onehot(pred, c), alpha)
    return terms.ce_loss if kind == "ce" else terms.cea_loss
