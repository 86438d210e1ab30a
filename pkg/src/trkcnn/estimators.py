"""scikit-learn style wrappers around the ranking banks and baselines.

Inputs are stacked channel-first images ``[n, 3, h, h]`` with values in
[0, 1]; labels are ordinal and their sorted order is the class order.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted

from .cam import extract_rois
from .data import SampleSet
from .imaging import concat_roi
from .pipeline import RunConfig, make_augmenter, predict_final, train_final, train_primitive
from .ranking import aggregate, predict_bits, rank_inconsistency, train_multiclass
from .training import predict_proba


def _check_images(X, channels: int = 3, size: int = None) -> np.ndarray:
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != channels or X.shape[2] != X.shape[3]:
        raise ValueError(f"expected images of shape [n, {channels}, h, h], got {X.shape}")
    if size is not None and X.shape[2] != size:
        raise ValueError(f"images are {X.shape[2]}x{X.shape[3]}, estimator expects {size}x{size}")
    return X


class _BaseCNN(ClassifierMixin, BaseEstimator):
    def __init__(self, input_size=64, stages=((16, 2), (32, 2), (64, 2), (64, 2)), batch_norm=True,
                 epochs=100, batch_size=16, learning_rate=1e-4, patience=10, factor=0.5, loss="ce", alpha=0.1,
                 augment=True, validation_fraction=0.15, random_state=0, dtype="float32", n_jobs=1):
        self.input_size = input_size
        self.stages = stages
        self.batch_norm = batch_norm
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.factor = factor
        self.loss = loss
        self.alpha = alpha
        self.augment = augment
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.dtype = dtype
        self.n_jobs = n_jobs

    def _run_config(self, n_classes: int, **extra) -> RunConfig:
        return RunConfig(n_classes=n_classes, input_size=self.input_size, stages=tuple(map(tuple, self.stages)),
                         batch_norm=self.batch_norm, dtype=self.dtype, primitive_epochs=self.epochs,
                         baseline_epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                         patience=self.patience, factor=self.factor, primitive_loss=self.loss,
                         baseline_loss=self.loss, alpha=self.alpha, augment=self.augment,
                         workers=self.n_jobs, **extra)

    def _prepare(self, X, y, X_val=None, y_val=None):
        X = _check_images(X, 3, self.input_size)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        codes = np.searchsorted(self.classes_, y)
        if X_val is None:
            idx = np.arange(len(X))
            tr, va = train_test_split(idx, test_size=self.validation_fraction, stratify=codes,
                                      random_state=self.random_state)
            tr, va = np.sort(tr), np.sort(va)
            Xv, yv = X[va], codes[va]
            X, codes = X[tr], codes[tr]
        else:
            Xv = _check_images(X_val, 3, self.input_size)
            yv = np.searchsorted(self.classes_, np.asarray(y_val))
        train = SampleSet(X.astype(self.dtype), codes, [f"t{i}" for i in range(len(X))])
        val = SampleSet(Xv.astype(self.dtype), yv, [f"v{i}" for i in range(len(Xv))])
        return train, val

    @property
    def n_classes_(self) -> int:
        return len(self.classes_)

    def _images(self, X):
        check_is_fitted(self, "classes_")
        return _check_images(X, 3, self.input_size).astype(self.dtype)


class RankingCNNClassifier(_BaseCNN):
    """N-1 binary "label >= k" sub-models whose votes are summed."""

    def fit(self, X, y, X_val=None, y_val=None):
        train, val = self._prepare(X, y, X_val, y_val)
        cfg = self._run_config(self.n_classes_)
        self.bank_ = train_primitive(cfg, train, val, int(self.random_state))
        self.curves_ = self.bank_.curves
        return self

    def predict_bits(self, X) -> np.ndarray:
        return predict_bits(self.bank_, self._images(X))

    def predict(self, X) -> np.ndarray:
        P, _ = aggregate(self.bank_, self._images(X))
        return self.classes_[P]

    def rank_inconsistency(self, X) -> float:
        return rank_inconsistency(self.predict_bits(X))


class TRkCNNClassifier(RankingCNNClassifier):
    """Ranking bank followed by a second bank fed with the image plus its fused ROI."""

    def __init__(self, input_size=64, stages=((16, 2), (32, 2), (64, 2), (64, 2)), batch_norm=True,
                 epochs=100, batch_size=16, learning_rate=1e-4, patience=10, factor=0.5, loss="ce", alpha=0.1,
                 augment=True, validation_fraction=0.15, random_state=0, dtype="float32", n_jobs=1,
                 final_epochs=100, final_loss="cea", fc_widths=(256, 64), dropout=0.5, variant="standard",
                 upsample="bilinear"):
        super().__init__(input_size, stages, batch_norm, epochs, batch_size, learning_rate, patience, factor, loss,
                         alpha, augment, validation_fraction, random_state, dtype, n_jobs)
        self.final_epochs = final_epochs
        self.final_loss = final_loss
        self.fc_widths = fc_widths
        self.dropout = dropout
        self.variant = variant
        self.upsample = upsample

    def _run_config(self, n_classes: int, **extra) -> RunConfig:
        return super()._run_config(n_classes, final_epochs=self.final_epochs, final_loss=self.final_loss,
                                   fc_widths=tuple(self.fc_widths), dropout=self.dropout, variant=self.variant,
                                   upsample=self.upsample, **extra)

    def fit(self, X, y, X_val=None, y_val=None):
        train, val = self._prepare(X, y, X_val, y_val)
        cfg = self._run_config(self.n_classes_)
        seed = int(self.random_state)
        self.primitive_ = train_primitive(cfg, train, val, seed)
        rois = {}
        for ds in (train, val):
            rois.update(extract_rois(self.primitive_, ds.images, ds.ids, self.variant, self.upsample))
        self.bank_ = train_final(cfg, self.primitive_, rois, train, val, seed)
        self.curves_ = self.bank_.curves
        return self

    def roi(self, X) -> np.ndarray:
        X = self._images(X)
        ids = [str(i) for i in range(len(X))]
        rois = extract_rois(self.primitive_, X, ids, self.variant, self.upsample)
        return np.stack([rois[i].values for i in ids])

    def predict_primitive(self, X) -> np.ndarray:
        P, _ = aggregate(self.primitive_, self._images(X))
        return self.classes_[P]

    def predict(self, X) -> np.ndarray:
        X = self._images(X)
        return self.classes_[predict_final(self.bank_, X, self.primitive_, variant=self.variant,
                                           upsample_mode=self.upsample)]

    def predict_bits(self, X) -> np.ndarray:
        X = self._images(X)
        return predict_bits(self.bank_, concat_roi(X, self.roi(X)).astype(self.dtype))


class MultiClassCNNClassifier(_BaseCNN):
    """Single softmax baseline; ``mapping`` merges labels for binary variants."""

    def __init__(self, input_size=64, stages=((16, 2), (32, 2), (64, 2), (64, 2)), batch_norm=True,
                 epochs=100, batch_size=16, learning_rate=1e-4, patience=10, factor=0.5, loss="ce", alpha=0.1,
                 augment=True, validation_fraction=0.15, random_state=0, dtype="float32", n_jobs=1,
                 mapping="identity", fc_widths=(256, 64), dropout=0.5):
        super().__init__(input_size, stages, batch_norm, epochs, batch_size, learning_rate, patience, factor, loss,
                         alpha, augment, validation_fraction, random_state, dtype, n_jobs)
        self.mapping = mapping
        self.fc_widths = fc_widths
        self.dropout = dropout

    def fit(self, X, y, X_val=None, y_val=None):
        train, val = self._prepare(X, y, X_val, y_val)
        cfg = self._run_config(self.n_classes_, fc_widths=tuple(self.fc_widths), dropout=self.dropout)
        classes = self.n_classes_ if self.mapping == "identity" else 2
        self.model_, self.curve_ = train_multiclass(cfg.backbone("baseline", classes), train, val,
                                                    cfg.schedule("baseline"), self.n_classes_, self.mapping,
                                                    int(self.random_state), make_augmenter(cfg.augment_policy()))
        return self

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self.model_, self._images(X))

    def predict(self, X) -> np.ndarray:
        codes = self.predict_proba(X).argmax(axis=1)
        return self.classes_[codes] if self.mapping == "identity" else codes


class RoiTransformer(TransformerMixin, BaseEstimator):
    """Maps images to their fused ROI grids using a trained ranking classifier.

    ``ranker`` is a fitted :class:`RankingCNNClassifier` (prefit) or an
    unfitted one that ``fit`` trains.
    """

    def __init__(self, ranker=None, variant="standard", upsample="bilinear"):
        self.ranker = ranker
        self.variant = variant
        self.upsample = upsample

    def fit(self, X, y=None):
        ranker = self.ranker if self.ranker is not None else RankingCNNClassifier()
        try:
            check_is_fitted(ranker, "bank_")
        except Exception:
            if y is None:
                raise ValueError("an unfitted ranker needs labels to fit")
            ranker.fit(X, y)
        self.ranker_ = ranker
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "ranker_")
        X = self.ranker_._images(X)
        ids = [str(i) for i in range(len(X))]
        rois = extract_rois(self.ranker_.bank_, X, ids, self.variant, self.upsample)
        return np.stack([rois[i].values for i in ids])
