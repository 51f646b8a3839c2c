import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from mola_kit.datasets import make_blobs
from mola_kit.estimators import DeepEnsembleClassifier, MlpClassifier, MolaClassifier


@pytest.fixture(scope="module")
def blobs():
    data = make_blobs(3, 240, spread=0.5, seed=7)
    return data.X, data.y


FAST = dict(hidden_dims=(16,), epochs=60, learning_rate=5e-3, seed=0)


def test_get_params_roundtrip():
    est = MolaClassifier(n_members=3, structure="diag", prior_precision=0.5)
    params = est.get_params()
    assert params["n_members"] == 3 and params["structure"] == "diag"
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(prior_precision=2.0)
    assert est.prior_precision == 2.0


def test_unfitted_raises(blobs):
    X, _ = blobs
    for est in (MlpClassifier(), DeepEnsembleClassifier(), MolaClassifier()):
        with pytest.raises(NotFittedError):
            est.predict_proba(X)


def test_mlp_classifier_fits_blobs(blobs):
    X, y = blobs
    est = MlpClassifier(**FAST).fit(X, y)
    assert est.n_features_in_ == 2
    assert (est.predict(X) == y).mean() >= 0.95
    probs = est.predict_proba(X)
    assert probs.shape == (len(y), 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)


def test_fit_returns_self_and_is_deterministic(blobs):
    X, y = blobs
    a = MlpClassifier(**FAST)
    assert a.fit(X, y) is a
    b = MlpClassifier(**FAST).fit(X, y)
    np.testing.assert_array_equal(a.predict_proba(X[:10]), b.predict_proba(X[:10]))


def test_string_labels_roundtrip(blobs):
    X, y = blobs
    names = np.array(["ant", "bee", "cat"])[y]
    est = MlpClassifier(**FAST).fit(X, names)
    assert set(est.classes_) == {"ant", "bee", "cat"}
    assert set(est.predict(X[:20])) <= {"ant", "bee", "cat"}


def test_deep_ensemble(blobs):
    X, y = blobs
    est = DeepEnsembleClassifier(n_members=3, **FAST).fit(X, y)
    assert len(est.nets_) == 3
    assert (est.predict(X) == y).mean() >= 0.95


@pytest.mark.parametrize("structure", ["full", "kfac", "diag"])
def test_mola_classifier_structures(blobs, structure):
    X, y = blobs
    est = MolaClassifier(n_members=2, structure=structure, **FAST).fit(X, y)
    probs = est.predict_proba(X[:15])
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert (est.predict(X) == y).mean() >= 0.95


def test_mola_evidence_weighting_and_mc(blobs):
    X, y = blobs
    est = MolaClassifier(
        n_members=3, weighting="evidence", predictive="mc", mc_samples=50, **FAST
    ).fit(X, y)
    w = est.model_.weights.values
    assert abs(w.sum() - 1.0) <= 1e-12 and np.all(w >= 0)
    assert est.predict_proba(X[:5]).shape == (5, 3)


def test_mola_confidence_scores(blobs):
    X, y = blobs
    est = MolaClassifier(n_members=2, **FAST).fit(X, y)
    conf = est.confidence(X[:10])
    assert conf.shape == (10,)
    assert np.all((conf >= 1 / 3) & (conf <= 1.0))


def test_pipeline_composition(blobs):
    X, y = blobs
    pipe = make_pipeline(StandardScaler(), MlpClassifier(**FAST))
    pipe.fit(X, y)
    assert pipe.score(X, y) >= 0.95


def test_invalid_hyperparameters(blobs):
    X, y = blobs
    with pytest.raises(ValueError):
        MolaClassifier(weighting="entropy", **FAST).fit(X, y)
    with pytest.raises(ValueError):
        MolaClassifier(predictive="laplace", **FAST).fit(X, y)
    with pytest.raises(ValueError):
        MlpClassifier(optimizer="newton").fit(X, y)
