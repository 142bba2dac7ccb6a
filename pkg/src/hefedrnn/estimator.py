"""scikit-learn style wrappers around the federated trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelBinarizer
from sklearn.utils.validation import check_array, check_is_fitted

from .approx import ClipSpec
from .data import WindowedSet, shard_even
from .exceptions import DimensionError
from .federation import Federation, ModelConfig, TrainConfig


def check_sequences(X, n_features: int | None = None) -> np.ndarray:
    """Validate a batch of sequences; (n, T) is read as one feature per step."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=True)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise DimensionError(f"expected (n, T) or (n, T, d) sequences, got {X.ndim} dimensions")
    if n_features is not None and X.shape[2] != n_features:
        raise DimensionError(f"X has {X.shape[2]} features, estimator was fitted with {n_features}")
    return X


def check_targets(y, n: int) -> np.ndarray:
    """Targets as (n, kappa, o): (n,) -> (n,1,1), (n,o) -> (n,1,o)."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None, None]
    elif y.ndim == 2:
        y = y[:, None, :]
    if y.ndim != 3 or y.shape[0] != n:
        raise DimensionError(f"targets of shape {y.shape} do not match {n} sequences")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain NaN or infinity")
    return y


class _FederatedRNN(BaseEstimator):
    def __init__(self, arch="elman", hidden=32, n_parties=1, global_iters=200, batch=256, lr=0.1,
                 clip_threshold=5.0, clip_variant="soft", exact_activations=False, quantize=True, ring_log=14,
                 delta=None, topology="tree", mode="fedavg-grad", cached_transforms=False, use_bias=True,
                 oblivious=False, random_state=0):
        self.arch = arch
        self.hidden = hidden
        self.n_parties = n_parties
        self.global_iters = global_iters
        self.batch = batch
        self.lr = lr
        self.clip_threshold = clip_threshold
        self.clip_variant = clip_variant
        self.exact_activations = exact_activations
        self.quantize = quantize
        self.ring_log = ring_log
        self.delta = delta
        self.topology = topology
        self.mode = mode
        self.cached_transforms = cached_transforms
        self.use_bias = use_bias
        self.oblivious = oblivious
        self.random_state = random_state

    def _configs(self, outputs: int):
        clip = None if self.clip_variant in (None, "none") else ClipSpec(self.clip_threshold, self.clip_variant)
        mc = ModelConfig(arch=self.arch, hidden=self.hidden, outputs=outputs,
                         exact_activations=self.exact_activations, use_bias=self.use_bias)
        tc = TrainConfig(global_iters=self.global_iters, lr=self.lr, batch=self.batch, mode=self.mode, clip=clip,
                         ring_log=self.ring_log, quantize=self.quantize, delta=self.delta, topology=self.topology,
                         cached_transforms=self.cached_transforms)
        return mc, tc

    def _fit(self, X, Y):
        X = check_sequences(X)
        self.n_features_in_ = X.shape[2]
        mc, tc = self._configs(Y.shape[2])
        shards = [s.as_pair() for s in shard_even(WindowedSet(X, Y), self.n_parties)]
        self.federation_ = Federation(shards, mc, tc, seed=self.random_state)
        self.federation_.train()
        self.weights_ = self.federation_.weights()
        return self

    def _raw_predict(self, X) -> np.ndarray:
        check_is_fitted(self, "federation_")
        X = check_sequences(X, self.n_features_in_)
        fed = self.federation_
        pred = fed.predict_oblivious(X) if self.oblivious else fed.predict_decrypted(X)
        return pred.values


class FederatedRNNRegressor(RegressorMixin, _FederatedRNN):
    """Encrypted federated RNN regressor. Targets are the values following each sequence."""

    def fit(self, X, y):
        X = check_sequences(X)
        y_arr = np.asarray(y)
        self._y_ndim = y_arr.ndim
        return self._fit(X, check_targets(y_arr, X.shape[0]))

    def predict(self, X):
        P = self._raw_predict(X)
        if self._y_ndim == 1:
            return P[:, -1, 0]
        if self._y_ndim == 2:
            return P[:, -1, :]
        return P


class FederatedRNNClassifier(ClassifierMixin, _FederatedRNN):
    """Classifier trained on one-hot targets with the squared-error loss."""

    def fit(self, X, y):
        X = check_sequences(X)
        y = np.asarray(y)
        self._binarizer = LabelBinarizer()
        Y = self._binarizer.fit_transform(y).astype(np.float64)
        if Y.shape[1] == 1:
            Y = np.concatenate([1.0 - Y, Y], axis=1)
        self.classes_ = self._binarizer.classes_
        return self._fit(X, Y[:, None, :])

    def decision_function(self, X):
        return self._raw_predict(X)[:, -1, :]

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
