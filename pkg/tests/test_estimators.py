"""Estimator interface: parameter handling, validation, fit/predict."""

import numpy as np
import pytest

from dadlnet.estimators import DADLNetClassifier
from dadlnet.montage import openbmi_montage
from dadlnet.synth import SynthConfig, synth_epochs


@pytest.fixture(scope="module")
def data():
    cfg = SynthConfig(n_subjects=1, trials=32, fs=64.0, T=64, class_gap=3.0,
                      seed=0)
    eset = synth_epochs(cfg, 0)
    return eset.data, eset.labels, eset.channel_names


def make_clf(channel_names, **kw):
    base = dict(montage=openbmi_montage(), channel_names=channel_names,
                fs=64.0, max_epochs=2, patience=2, seed=0)
    base.update(kw)
    return DADLNetClassifier(**base)


class TestParams:
    def test_get_set_round_trip(self):
        clf = DADLNetClassifier()
        params = clf.get_params()
        assert params["lr"] == 0.001 and params["patience"] == 30
        clf.set_params(lr=0.01, seed=3)
        assert clf.lr == 0.01 and clf.seed == 3

    def test_unknown_param_rejected(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            DADLNetClassifier().set_params(learning_rate=0.1)

    def test_clone_compatible(self):
        clf = DADLNetClassifier(lr=0.005)
        twin = DADLNetClassifier(**clf.get_params())
        assert twin.get_params() == clf.get_params()


class TestValidation:
    def test_unfitted_predict_rejected(self, data):
        X, _, names = data
        with pytest.raises(ValueError, match="not fitted"):
            make_clf(names).predict(X)

    def test_missing_montage_rejected(self, data):
        X, y, _ = data
        with pytest.raises(ValueError, match="montage"):
            DADLNetClassifier().fit(X, y)

    def test_bad_shapes_rejected(self, data):
        X, y, names = data
        clf = make_clf(names)
        with pytest.raises(ValueError, match="trials, channels"):
            clf.fit(X[:, :, 0], y)
        with pytest.raises(ValueError, match="y shape"):
            clf.fit(X, y[:-1])

    def test_non_binary_labels_rejected(self, data):
        X, y, names = data
        with pytest.raises(ValueError, match="0 and 1"):
            make_clf(names).fit(X, y + 1)

    def test_single_class_rejected(self, data):
        X, _, names = data
        with pytest.raises(ValueError, match="both classes"):
            make_clf(names).fit(X, np.zeros(len(X), dtype=int))


class TestFitPredict:
    def test_fit_predict_shapes_and_probs(self, data):
        X, y, names = data
        clf = make_clf(names).fit(X, y)
        proba = clf.predict_proba(X)
        assert proba.shape == (len(X), 2)
        assert np.allclose(proba.sum(axis=1), 1.0)
        pred = clf.predict(X)
        assert set(np.unique(pred)) <= {0, 1}
        assert 0.0 <= clf.score(X, y) <= 1.0

    def test_separable_data_learned(self, data):
        X, y, names = data
        clf = make_clf(names, max_epochs=25, patience=10).fit(X, y)
        assert clf.score(X, y) >= 0.9

    def test_deterministic(self, data):
        X, y, names = data
        p1 = make_clf(names).fit(X, y).predict_proba(X)
        p2 = make_clf(names).fit(X, y).predict_proba(X)
        assert np.array_equal(p1, p2)
