"""Ranking decomposition of an ordinal task into N-1 binary sub-models.

Sub-model ``k`` (1-based) answers "is the label >= k?"; the predicted class
is the number of sub-models that answer yes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .backbone import Backbone, BackboneConfig, build
from .data import SampleSet
from .training import Schedule, TrainingCurve, fit_backbone, predict_proba

logger = logging.getLogger(__name__)

MAPPINGS = ("identity", "merge_high", "merge_low")


def relabel(labels, k: int, n_classes: int = None) -> np.ndarray:
    """Binary targets for sub-model ``k``: 0 where ``y < k``, 1 where ``y >= k``."""
    y = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = max(int(y.max()) + 1, 2) if y.size else 2
    if not 1 <= k <= n_classes - 1:
        raise ValueError(f"k={k} outside 1..{n_classes - 1}")
    return (y >= k).astype(np.int64)


def relabel_set(dataset: SampleSet, k: int, n_classes: int) -> SampleSet:
    return SampleSet(dataset.images, relabel(dataset.labels, k, n_classes), dataset.ids)


def map_labels(labels, mapping: str, n_classes: int = 3) -> np.ndarray:
    """Label mapping for the multi-class baselines.

    ``merge_high`` keeps class 0 and merges everything above it;
    ``merge_low`` merges everything below the top class.
    """
    y = np.asarray(labels, dtype=np.int64)
    if mapping == "identity":
        return y.copy()
    if mapping == "merge_high":
        return relabel(y, 1, n_classes)
    if mapping == "merge_low":
        return relabel(y, n_classes - 1, n_classes)
    raise ValueError(f"unknown mapping {mapping!r}; expected one of {MAPPINGS}")


def stage_rng(seed: int, stage: int, k: int) -> np.random.Generator:
    # independent stream per (stage, sub-model) so training order is irrelevant
    return np.random.default_rng([int(seed), int(stage), int(k)])


@dataclass
class SubModelBank:
    n_classes: int
    models: List[Backbone]
    curves: List[TrainingCurve] = field(default_factory=list)

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("a bank needs at least two classes")
        if len(self.models) != self.n_classes - 1:
            raise ValueError(f"a bank over {self.n_classes} classes needs {self.n_classes - 1} sub-models")
        configs = {json.dumps(m.config.to_dict(), sort_keys=True) for m in self.models}
        if len(configs) > 1:
            raise ValueError("all sub-models must share one configuration")

    @property
    def config(self) -> BackboneConfig:
        return self.models[0].config

    def model(self, k: int) -> Backbone:
        """Sub-model for threshold ``k`` (1-based)."""
        return self.models[k - 1]

    def content_hash(self) -> str:
        h = hashlib.sha256(str(self.n_classes).encode())
        for m in self.models:
            h.update(m.content_hash().encode())
        return h.hexdigest()

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        best = []
        for k, m in enumerate(self.models, start=1):
            m.save(d / f"sub{k}.ornk")
            if k <= len(self.curves):
                (d / f"curve_sub{k}.csv").write_text(self.curves[k - 1].to_csv())
                best.append(self.curves[k - 1].best_val_loss)
        config_hash = hashlib.sha256(json.dumps(self.config.to_dict(), sort_keys=True).encode()).hexdigest()
        manifest = {"n_classes": self.n_classes, "config_hash": config_hash,
                    "best_val_loss": best, "bank_hash": self.content_hash()}
        (d / "bank.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "SubModelBank":
        d = Path(directory)
        meta_path = d / "bank.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"no bank manifest at {meta_path}")
        meta = json.loads(meta_path.read_text())
        n = meta["n_classes"]
        models = [Backbone.load(d / f"sub{k}.ornk") for k in range(1, n)]
        return cls(n, models)


def _train_one(config: BackboneConfig, k: int, n_classes: int, train: SampleSet, val: SampleSet,
               schedule: Schedule, seed: int, stage: int, augment, init: Optional[Backbone]):
    rng = stage_rng(seed, stage, k)
    model = build(config, rng) if init is None else init
    y = relabel(train.labels, k, n_classes)
    y_val = relabel(val.labels, k, n_classes)
    if len(np.unique(y)) < 2:
        logger.warning("sub-model %d sees a single class after relabelling", k)
    curve = fit_backbone(model, train.images, y, val.images, y_val, schedule, rng, augment)
    return model, curve


def _check_disjoint(train: SampleSet, val: SampleSet):
    overlap = set(train.ids) & set(val.ids)
    if overlap:
        raise ValueError(f"validation ids overlap training ids: {sorted(overlap)[:5]}")
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be nonempty")


def train_bank(config: BackboneConfig, n_classes: int, train: SampleSet, val: SampleSet,
               schedule: Schedule, seed: int = 0, augment: Callable = None,
               init_models: Sequence[Backbone] = None, stage: int = 1, n_jobs: int = 1) -> SubModelBank:
    """Train the N-1 sub-models independently and keep each one's best checkpoint.

    ``init_models`` (one per sub-model) replaces random initialisation, e.g.
    with weights transferred from an earlier stage.
    """
    _check_disjoint(train, val)
    if config.classes != 2:
        raise ValueError("ranking sub-models are binary; set classes=2")
    inits = list(init_models) if init_models is not None else [None] * (n_classes - 1)
    if len(inits) != n_classes - 1:
        raise ValueError("need one initial model per sub-model")
    jobs = [delayed(_train_one)(config, k, n_classes, train, val, schedule, seed, stage, augment, inits[k - 1])
            for k in range(1, n_classes)]
    results = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [j[0](*j[1], **j[2]) for j in jobs]
    return SubModelBank(n_classes, [m for m, _ in results], [c for _, c in results])


def predict_bits(bank: SubModelBank, X: np.ndarray) -> np.ndarray:
    """``[n, N-1]`` matrix of binary sub-model outputs."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    return np.stack([predict_proba(m, X).argmax(axis=1) for m in bank.models], axis=1)


def aggregate_bits(bits) -> np.ndarray:
    return np.asarray(bits, dtype=np.int64).sum(axis=-1)


def aggregate(bank: SubModelBank, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted class (sum of sub-model bits) and the bits themselves."""
    bits = predict_bits(bank, X)
    return aggregate_bits(bits), bits


def rank_inconsistency(bits) -> float:
    """Fraction of samples whose bits are not non-increasing in k."""
    bits = np.atleast_2d(np.asarray(bits))
    if bits.shape[1] < 2:
        return 0.0
    bad = np.any(np.diff(bits, axis=1) > 0, axis=1)
    return float(bad.mean())


def train_multiclass(config: BackboneConfig, train: SampleSet, val: SampleSet, schedule: Schedule,
                     n_classes: int, mapping: str = "identity", seed: int = 0,
                     augment: Callable = None) -> Tuple[Backbone, TrainingCurve]:
    """Single softmax baseline over the (possibly merged) labels."""
    _check_disjoint(train, val)
    classes = n_classes if mapping == "identity" else 2
    cfg = config.replace(classes=classes)
    rng = stage_rng(seed, 3, MAPPINGS.index(mapping))
    model = build(cfg, rng)
    y = map_labels(train.labels, mapping, n_classes)
    y_val = map_labels(val.labels, mapping, n_classes)
    curve = fit_backbone(model, train.images, y, val.images, y_val, schedule, rng, augment)
    return model, curve
