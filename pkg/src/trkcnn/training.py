"""Mini-batch training of a single backbone with Adam and plateau decay."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .autograd import Adam, PlateauSchedule
from .backbone import Backbone, forward
from .losses import classification_loss, loss_value

logger = logging.getLogger(__name__)


@dataclass
class Schedule:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-4
    patience: int = 10
    factor: float = 0.5
    loss: str = "ce"
    alpha: float = 0.1
    class_weight: bool = False
    # stop once eval-mode accuracy on the (unaugmented) training set reaches this
    target_train_accuracy: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.loss not in ("ce", "cea"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def replace(self, **changes) -> "Schedule":
        d = asdict(self)
        d.update(changes)
        return Schedule(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    learning_rate: float
    train_acc: Optional[float] = None


@dataclass
class TrainingCurve:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    @property
    def final_val_loss(self) -> float:
        return self.records[-1].val_loss

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc", "learning_rate"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.learning_rate)])
        return buf.getvalue()


def predict_proba(model: Backbone, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(X), batch_size):
        out.append(forward(model, X[i:i + batch_size], training=False).probabilities.data)
    return np.concatenate(out, axis=0).astype(np.float64)


def evaluate(model: Backbone, X: np.ndarray, y: np.ndarray, loss: str = "ce", alpha: float = 0.1):
    """Return (loss, accuracy) of ``model`` on a labelled set in eval mode."""
    probs = predict_proba(model, X)
    return loss_value(probs, y, loss, alpha), float(np.mean(probs.argmax(axis=1) == y))


def _batches(n: int, batch_size: int, rng: np.random.Generator, min_size: int):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # a trailing batch too small for batch statistics is folded into its predecessor
    if len(chunks) > 1 and len(chunks[-1]) < min_size:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def fit_backbone(model: Backbone, X: np.ndarray, y: np.ndarray, X_val: np.ndarray, y_val: np.ndarray,
                 schedule: Schedule, rng: np.random.Generator,
                 augment: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
                 ) -> TrainingCurve:
    """Train ``model`` in place and restore its minimum-validation-loss weights.

    ``augment`` maps one ``[C, h, h]`` sample to a transformed copy; it is
    drawn afresh for every sample in every epoch.
    """
    y = np.asarray(y, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(X) == 0 or len(X_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    classes = model.config.classes
    counts = np.bincount(y, minlength=classes)
    if np.any(counts == 0):
        logger.warning("training labels cover only classes %s of %d", np.flatnonzero(counts).tolist(), classes)
    weights = None
    if schedule.class_weight:
        per_class = np.where(counts > 0, len(y) / (classes * np.maximum(counts, 1)), 0.0)
        weights = per_class[y]

    dtype = model.dtype
    X = np.asarray(X, dtype=dtype)
    X_val = np.asarray(X_val, dtype=dtype)
    opt = Adam(model.parameters(), lr=schedule.learning_rate)
    plateau = PlateauSchedule(schedule.learning_rate, schedule.patience, schedule.factor)
    curve = TrainingCurve()
    best_state = model.state_dict()
    min_batch = 2 if model.config.batch_norm else 1
    if min_batch > len(X):
        raise ValueError("batch normalisation needs at least two training samples")

    for epoch in range(1, schedule.epochs + 1):
        total, seen = 0.0, 0
        for idx in _batches(len(X), schedule.batch_size, rng, min_batch):
            xb = X[idx]
            if augment is not None:
                xb = np.stack([augment(s, rng) for s in xb]).astype(dtype, copy=False)
            opt.zero_grad()
            trace = forward(model, xb, training=True, rng=rng)
            loss = classification_loss(trace.logits, y[idx], schedule.loss, schedule.alpha,
                                       None if weights is None else weights[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            seen += len(idx)
        val_loss, val_acc = evaluate(model, X_val, y_val, schedule.loss, schedule.alpha)
        if not np.isfinite(val_loss):
            raise FloatingPointError(f"validation loss became non-finite at epoch {epoch}")
        record = EpochRecord(epoch, total / seen, val_loss, val_acc, opt.lr)
        if val_loss < curve.best_val_loss:
            curve.best_val_loss = val_loss
            curve.best_epoch = epoch
            best_state = model.state_dict()
        opt.lr = plateau.step(val_loss)
        stop = False
        if schedule.target_train_accuracy is not None:
            _, record.train_acc = evaluate(model, X, y)
            stop = record.train_acc >= schedule.target_train_accuracy
        curve.records.append(record)
        logger.debug("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.3f", epoch, record.train_loss, val_loss, val_acc)
        if stop:
            # the caller asked for a fit on the training data itself: keep these weights
            best_state = model.state_dict()
            curve.best_epoch = epoch
            curve.best_val_loss = val_loss
            break
    model.load_state_dict(best_state)
    return curve
