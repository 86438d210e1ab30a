import numpy as np
import pytest
from sklearn.base import clone

from trkcnn.estimators import MultiClassCNNClassifier, RankingCNNClassifier, RoiTransformer, TRkCNNClassifier

SMALL = dict(input_size=16, stages=((4, 1), (6, 1)), epochs=2, batch_size=8, learning_rate=1e-2, dtype="float64")


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    y = np.repeat([10, 20, 30], 8)
    X = rng.random((24, 3, 16, 16)) * 0.2 + (y[:, None, None, None] / 10 - 1) * 0.35
    return X, y


def test_get_params_and_clone():
    est = TRkCNNClassifier(final_epochs=3, variant="swapped")
    params = est.get_params()
    assert params["final_epochs"] == 3 and params["variant"] == "swapped" and params["learning_rate"] == 1e-4
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(epochs=7).epochs == 7


def test_ranking_fit_predict(toy):
    X, y = toy
    est = RankingCNNClassifier(**SMALL).fit(X, y)
    pred = est.predict(X)
    assert set(pred) <= {10, 20, 30}
    assert est.predict_bits(X).shape == (24, 2)
    assert 0.0 <= est.rank_inconsistency(X) <= 1.0
    assert 0.0 <= est.score(X, y) <= 1.0


def test_trk_fit_predict(toy):
    X, y = toy
    est = TRkCNNClassifier(final_epochs=1, fc_widths=(8,), **SMALL).fit(X, y)
    assert est.predict(X).shape == (24,)
    assert est.roi(X[:3]).shape == (3, 16, 16)
    assert set(est.predict_primitive(X)) <= {10, 20, 30}


def test_multiclass_mapping(toy):
    X, y = toy
    est = MultiClassCNNClassifier(mapping="merge_high", fc_widths=(8,), **SMALL).fit(X, y)
    assert est.predict_proba(X).shape == (24, 2)
    assert set(est.predict(X)) <= {0, 1}


def test_roi_transformer_with_prefit_ranker(toy):
    X, y = toy
    ranker = RankingCNNClassifier(**SMALL).fit(X, y)
    rois = RoiTransformer(ranker).fit(X).transform(X[:4])
    assert rois.shape == (4, 16, 16)
    assert np.allclose(rois.reshape(4, -1).mean(axis=1), 0, atol=1e-9)


def test_input_validation(toy):
    X, y = toy
    with pytest.raises(ValueError, match="shape"):
        RankingCNNClassifier(**SMALL).fit(X[:, :2], y)
    with pytest.raises(ValueError, match="two classes"):
        RankingCNNClassifier(**SMALL).fit(X, np.zeros(24))
    with pytest.raises(ValueError, match="labels"):
        RoiTransformer().fit(X)
