"""scikit-learn compatible classifiers for the two streams."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import DimensionError
from .models import (
    InertialStreamNet,
    TrainConfig,
    VisionStreamNet,
    build_from_config,
    predict_scores,
    train,
)


def _check_windows(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if X.ndim != 3:
        raise DimensionError(f"expected windows shaped [n_samples, window_len, n_features], got {X.shape}")
    return X


class _StreamClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict logic; subclasses provide ``_build``."""

    def _build(self, n_classes: int, window_len: int, n_features: int):
        raise NotImplementedError

    def fit(self, X, y, X_val=None, y_val=None, checkpoint_dir=None):
        """Train for the profile's epoch budget.

        When ``use_best`` is set the weights with the best validation accuracy
        are kept; without a validation set the training set stands in.
        """
        X = _check_windows(X)
        y = np.asarray(y)
        check_classification_targets(y)
        if len(y) != len(X):
            raise DimensionError(f"X has {len(X)} samples but y has {len(y)}")
        self.classes_ = np.unique(y)
        y_idx = np.searchsorted(self.classes_, y)
        if X_val is None:
            X_val, yv_idx = np.zeros((0,) + X.shape[1:]), np.zeros(0, dtype=int)
        else:
            X_val = _check_windows(X_val)
            yv_idx = np.searchsorted(self.classes_, np.asarray(y_val))
        self.net_ = self._build(len(self.classes_), X.shape[1], X.shape[2])
        cfg = TrainConfig(
            batch_size=self.batch_size,
            lr=self.learning_rate,
            epochs=self.epochs,
            profile=self.train_profile,
            seed=self.random_state,
            shuffle=self.shuffle,
        )
        result = train(self.net_, X, y_idx, X_val, yv_idx, cfg, checkpoint_dir=checkpoint_dir)
        if self.use_best:
            self.net_.load_state_dict(result.best_state, prefix=f"{self.net_.stream}/")
        self.net_.eval()
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = X.shape[2]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        X = _check_windows(X)
        if X.shape[2] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} features per step, got {X.shape[2]}")
        return predict_scores(self.net_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def save(self, path):
        check_is_fitted(self, "net_")
        meta = {
            "architecture": self.net_.config(),
            "classes": self.classes_.tolist(),
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
        }
        return save_checkpoint(self.net_.state_dict(prefix=f"{self.net_.stream}/"), path, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_checkpoint(path)
        params = meta.get("params", {})
        if "units" in params:
            params["units"] = tuple(params["units"])
        est = cls(**params)
        est.net_ = build_from_config(meta["architecture"])
        est.net_.load_state_dict(arrays, prefix=f"{est.net_.stream}/")
        est.net_.eval()
        est.classes_ = np.asarray(meta["classes"])
        est.n_features_in_ = meta["architecture"].get("n_features", meta["architecture"].get("n_channels"))
        return est


class VisionStreamClassifier(_StreamClassifier):
    """Keypoint windows [n, T, 50] -> activity, via the Conv1D + LSTM vision net."""

    def __init__(
        self,
        epochs=None,
        train_profile="default",
        batch_size=32,
        learning_rate=1e-4,
        filters=16,
        kernel_size=3,
        lstm_units=20,
        dropout=0.4,
        conv_activation="relu",
        pooling="flatten",
        shuffle=True,
        use_best=True,
        random_state=0,
    ):
        self.epochs = epochs
        self.train_profile = train_profile
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.filters = filters
        self.kernel_size = kernel_size
        self.lstm_units = lstm_units
        self.dropout = dropout
        self.conv_activation = conv_activation
        self.pooling = pooling
        self.shuffle = shuffle
        self.use_best = use_best
        self.random_state = random_state

    def _build(self, n_classes, window_len, n_features):
        return VisionStreamNet(
            n_classes,
            window_len,
            n_features=n_features,
            filters=self.filters,
            kernel_size=self.kernel_size,
            lstm_units=self.lstm_units,
            dropout=self.dropout,
            conv_activation=self.conv_activation,
            pooling=self.pooling,
            seed=self.random_state,
        )


class InertialStreamClassifier(_StreamClassifier):
    """Sensor windows [n, T, channels] -> activity, via the stacked-LSTM inertial net."""

    def __init__(
        self,
        epochs=None,
        train_profile="default",
        batch_size=32,
        learning_rate=1e-4,
        units=(256, 128, 64),
        dropout=0.4,
        forget_bias=0.5,
        shuffle=True,
        use_best=True,
        random_state=0,
    ):
        self.epochs = epochs
        self.train_profile = train_profile
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.units = units
        self.dropout = dropout
        self.forget_bias = forget_bias
        self.shuffle = shuffle
        self.use_best = use_best
        self.random_state = random_state

    def _build(self, n_classes, window_len, n_features):
        return InertialStreamNet(
            n_classes,
            window_len,
            n_channels=n_features,
            units=tuple(self.units),
            dropout=self.dropout,
            forget_bias=self.forget_bias,
            seed=self.random_state,
        )
