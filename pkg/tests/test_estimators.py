import numpy as np
import pytest
from sklearn.base import clone

from robtune import data
from robtune.estimators import EnsembleClassifier


@pytest.fixture(scope="module")
def xy():
    ds = data.generate(3, 6, 50, 0.3, seed=41, mean_dim=4)
    return ds.X, ds.y


def small_clf(**kw):
    defaults = dict(kind="centralized", n_nodes=1, hidden=(12, 12), epochs=25,
                    batch=32, seed=2)
    defaults.update(kw)
    return EnsembleClassifier(**defaults)


def test_get_params_roundtrip_and_clone(xy):
    clf = small_clf(kind="iid", n_nodes=3, eta=0.05)
    params = clf.get_params()
    rebuilt = EnsembleClassifier(**params)
    assert rebuilt.get_params() == params
    cloned = clone(clf)
    assert cloned.get_params() == params


def test_fit_predict_score(xy):
    X, y = xy
    clf = small_clf().fit(X, y)
    preds = clf.predict(X)
    assert preds.shape == y.shape
    assert clf.score(X, y) > 0.8
    assert clf.n_features_in_ == X.shape[1]
    assert np.array_equal(clf.classes_, np.array([0, 1, 2]))


def test_decision_function_shape_and_argmax_consistency(xy):
    X, y = xy
    clf = small_clf(kind="full", n_nodes=2).fit(X, y)
    z = clf.decision_function(X[:7])
    assert z.shape == (7, 3)
    assert np.array_equal(clf.predict(X[:7]), clf.classes_[np.argmax(z, axis=1)])


def test_fit_is_deterministic(xy):
    X, y = xy
    a = small_clf(kind="iid", n_nodes=2).fit(X, y)
    b = small_clf(kind="iid", n_nodes=2).fit(X, y)
    assert np.array_equal(a.decision_function(X), b.decision_function(X))


def test_arbitrary_label_values(xy):
    X, y = xy
    labels = np.array(["ant", "bee", "cat"])[y]
    clf = small_clf().fit(X, labels)
    assert set(clf.predict(X[:20])) <= {"ant", "bee", "cat"}


def test_rejects_features_outside_unit_box(xy):
    X, y = xy
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        small_clf().fit(X * 3.0 - 1.0, y)


def test_rejects_unfitted_predict(xy):
    X, _ = xy
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        small_clf().predict(X)


def test_exposes_underlying_ensemble(xy):
    X, y = xy
    clf = small_clf(kind="iid", n_nodes=2).fit(X, y)
    assert len(clf.model_.members) == 2
    g = clf.model_.input_grad(X[0], int(np.searchsorted(clf.classes_, y[0])))
    assert g.shape == X[0].shape
