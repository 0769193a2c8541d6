"""scikit-learn compatible wrappers around the prototype model and the baseline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import evaluation as E
from .data import Dataset
from .model import BackboneConfig, BaselineModel, PBJModel, softmax_confidence
from .tensor import no_grad, softmax
from .training import TrainConfig, train


class _NetworkEstimator(ClassifierMixin, TransformerMixin, BaseEstimator):
    def _backbone_config(self, input_shape) -> BackboneConfig:
        return BackboneConfig(
            kind=self.backbone,
            input_shape=input_shape,
            latent_dim=self.latent_dim,
            hidden=tuple(self.hidden),
            channels=tuple(self.channels),
            paddings=tuple(self.paddings),
            fc_width=self.fc_width,
            projection_bias=self.projection_bias,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            schedule=tuple(self.schedule),
            gamma=self.gamma,
            seed=self.random_state,
        )

    def _validate_fit(self, X, y) -> Dataset:
        X, y = check_X_y(X, y, allow_nd=True, dtype=[np.float32, np.float64], ensure_2d=False)
        if X.ndim < 2:
            raise ValueError("X must have a sample axis and at least one feature axis")
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.input_shape_ = tuple(X.shape[1:])
        self.n_features_in_ = int(np.prod(self.input_shape_))
        return Dataset(X.astype(np.float32), encoded, len(self.classes_))

    def _validate(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True, dtype=[np.float32, np.float64], ensure_2d=False)
        if tuple(X.shape[1:]) != self.input_shape_:
            raise ValueError(f"expected samples of shape {self.input_shape_}, got {X.shape[1:]}")
        return X.astype(np.float32)

    def transform(self, X) -> np.ndarray:
        """Latent codes of ``X`` (eval-mode batchnorm)."""
        return self.model_.encode(self._validate(X))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))


class PBJClassifier(_NetworkEstimator):
    """Classifier whose scores come from latent distances to one example per class.

    After ``fit`` the training latents are cached and their class centroids
    drive ``predict``/``decision_function`` (single pass). ``score_samples``
    gives the similarity to the nearest centroid, the out-of-distribution
    score; ``id_confidence`` maps it through the sigmoid calibration fitted
    on the training set. ``explain`` runs stochastic prototype sampling.
    """

    def __init__(
        self,
        backbone="mlp",
        hidden=(64, 64),
        channels=(64, 128, 128),
        paddings=(1, 0, 1),
        fc_width=256,
        latent_dim=8,
        projection_bias=False,
        gamma=100.0,
        epochs=75,
        batch_size=128,
        lr=0.05,
        momentum=0.9,
        weight_decay=1e-4,
        schedule=((25, 0.1), (50, 0.1)),
        calibration_scale="std",
        random_state=0,
    ):
        self.backbone = backbone
        self.hidden = hidden
        self.channels = channels
        self.paddings = paddings
        self.fc_width = fc_width
        self.latent_dim = latent_dim
        self.projection_bias = projection_bias
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.calibration_scale = calibration_scale
        self.random_state = random_state

    def fit(self, X, y, checkpoint_path=None):
        dataset = self._validate_fit(X, y)
        self.model_ = PBJModel(
            self._backbone_config(self.input_shape_), dataset.num_classes, gamma=self.gamma, seed=self.random_state
        )
        self.train_report_ = train(self.model_, dataset, self._train_config(), checkpoint_path=checkpoint_path)
        return self._index(dataset)

    @classmethod
    def from_model(cls, model: PBJModel, X, y, classes=None, calibration_scale="std") -> "PBJClassifier":
        """Wrap an already trained model, rebuilding the cache from its training data."""
        cfg = model.config
        est = cls(
            backbone=cfg.kind, hidden=cfg.hidden, channels=cfg.channels, paddings=cfg.paddings,
            fc_width=cfg.fc_width, latent_dim=cfg.latent_dim, projection_bias=cfg.projection_bias,
            gamma=model.gamma, calibration_scale=calibration_scale,
        )
        X = np.asarray(X, dtype=np.float32)
        est.classes_ = np.arange(model.num_classes) if classes is None else np.asarray(classes)
        est.input_shape_ = tuple(X.shape[1:])
        est.n_features_in_ = int(np.prod(est.input_shape_))
        est.model_ = model.eval()
        return est._index(Dataset(X, np.asarray(y), model.num_classes))

    def _index(self, dataset: Dataset):
        self.cache_ = E.build_latent_cache(self.model_, dataset)
        self.centroids_ = E.build_centroids(self.cache_)
        self.calibration_ = E.calibrate(self.cache_, self.centroids_, self.calibration_scale)
        return self

    def decision_function(self, X) -> np.ndarray:
        return E.centroid_predict_batch(self.model_, self.centroids_, self._validate(X))[1]

    def similarity_to_centroids(self, X) -> np.ndarray:
        return E.centroid_predict_batch(self.model_, self.centroids_, self._validate(X))[2]

    def score_samples(self, X) -> np.ndarray:
        """Similarity to the nearest class centroid (higher = more in-distribution)."""
        return E.ood_score_batch(self.model_, self.centroids_, self._validate(X))

    def id_confidence(self, X) -> np.ndarray:
        return E.id_confidence(self.score_samples(X), self.calibration_)

    def explain(self, x, k: int = 100, random_state=None) -> E.PredictionOutcome:
        """Stochastic prototype prediction for one sample; class indices refer to ``classes_``."""
        x = self._validate(np.asarray(x)[None])[0]
        return E.stochastic_predict(self.model_, self.cache_, x, k, random_state)

    def predict_stochastic(self, X, k: int = 100, random_state=None) -> np.ndarray:
        X = self._validate(X)
        rng = np.random.default_rng(random_state)
        model, cache = self.model_, self.cache_
        cache.check(model)
        latents = model.encode(X).astype(np.float64)
        W = model.W.data.astype(np.float64)
        pools = cache.class_index
        preds = np.empty(len(X), dtype=np.int64)
        for i, latent in enumerate(latents):
            ids = np.stack([rng.choice(p, size=k) for p in pools], axis=1)
            m = E.similarities(np.broadcast_to(latent, (k, latent.size)), cache.latents[ids])
            votes = np.bincount(np.argmax(m @ W.T, axis=1), minlength=len(pools))
            preds[i] = np.argmax(votes)
        return self.classes_[preds]


class SoftmaxClassifier(_NetworkEstimator):
    """The same encoder with an ordinary affine + softmax head."""

    def __init__(
        self,
        backbone="mlp",
        hidden=(64, 64),
        channels=(64, 128, 128),
        paddings=(1, 0, 1),
        fc_width=256,
        latent_dim=8,
        projection_bias=False,
        epochs=75,
        batch_size=128,
        lr=0.05,
        momentum=0.9,
        weight_decay=1e-4,
        schedule=((25, 0.1), (50, 0.1)),
        random_state=0,
    ):
        self.backbone = backbone
        self.hidden = hidden
        self.channels = channels
        self.paddings = paddings
        self.fc_width = fc_width
        self.latent_dim = latent_dim
        self.projection_bias = projection_bias
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.random_state = random_state

    gamma = 0.0

    def fit(self, X, y, checkpoint_path=None):
        dataset = self._validate_fit(X, y)
        self.model_ = BaselineModel(self._backbone_config(self.input_shape_), dataset.num_classes, seed=self.random_state)
        self.train_report_ = train(self.model_, dataset, self._train_config(), checkpoint_path=checkpoint_path)
        return self

    def decision_function(self, X, batch_size: int = 1024) -> np.ndarray:
        X = self._validate(X)
        self.model_.eval()
        with no_grad():
            return np.concatenate(
                [self.model_(X[i : i + batch_size]).data for i in range(0, len(X), batch_size)]
            ).astype(np.float64)

    def score_samples(self, X) -> np.ndarray:
        """Maximum softmax probability."""
        return softmax_confidence(self.decision_function(X))
