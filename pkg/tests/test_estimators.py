import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pbj import PBJClassifier, SoftmaxClassifier


def fast(cls, **kw):
    return cls(hidden=(16,), latent_dim=4, epochs=5, batch_size=32, lr=0.05, schedule=(), **kw)


class TestParams:
    def test_clone_and_set_params(self):
        clf = PBJClassifier(gamma=10.0, latent_dim=3)
        twin = clone(clf)
        assert twin.get_params() == clf.get_params()
        assert twin.set_params(gamma=5.0).gamma == 5.0
        assert clf.gamma == 10.0

    def test_baseline_params_have_no_gamma(self):
        assert "gamma" not in SoftmaxClassifier().get_params()


class TestPBJClassifier:
    @pytest.fixture
    def fitted(self, blobs):
        labels = np.where(blobs.labels == 0, "left", "right")
        return fast(PBJClassifier, gamma=10.0).fit(blobs.features, labels), blobs, labels

    def test_fit_predict(self, fitted):
        clf, blobs, labels = fitted
        assert list(clf.classes_) == ["left", "right"]
        assert (clf.predict(blobs.features) == labels).mean() >= 0.95
        assert clf.score(blobs.features, labels) >= 0.95
        assert clf.transform(blobs.features).shape == (200, 4)

    def test_scores_and_confidence(self, fitted):
        clf, blobs, _ = fitted
        proba = clf.predict_proba(blobs.features[:5])
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        near = clf.score_samples(blobs.features[:50])
        far = clf.score_samples(np.full((5, 2), 40.0, np.float32))
        assert far.max() < np.median(near)
        assert (clf.id_confidence(blobs.features) > 0.5).mean() >= 0.9
        assert (clf.id_confidence(np.full((5, 2), 40.0, np.float32)) < 0.5).all()

    def test_stochastic_predictions(self, fitted):
        clf, blobs, labels = fitted
        preds = clf.predict_stochastic(blobs.features[::10], k=20, random_state=0)
        assert (preds == labels[::10]).mean() >= 0.9
        out = clf.explain(blobs.features[0], k=10, random_state=0)
        assert out.distribution.shape == (2,)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            PBJClassifier().predict(np.zeros((1, 2)))

    def test_wrong_width(self, fitted):
        with pytest.raises(ValueError):
            fitted[0].predict(np.zeros((2, 3)))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fast(PBJClassifier).fit(np.zeros((4, 2)), [1, 1, 1, 1])


def test_softmax_classifier(blobs):
    clf = fast(SoftmaxClassifier).fit(blobs.features, blobs.labels)
    assert clf.score(blobs.features, blobs.labels) >= 0.95
    conf = clf.score_samples(blobs.features)
    assert ((conf >= 0.5) & (conf <= 1.0)).all()
