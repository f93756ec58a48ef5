"""scikit-learn style wrappers around the pipeline.

Inputs may be a :class:`~lifemts.data.Dataset`, a sequence of
:class:`~lifemts.data.TimeSeriesSample`, or a ``(N, T, D)`` array with
``NaN`` marking missing cells.
"""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from .cme import check_correlation_matrix
from .data import (CLASSIFICATION, REGRESSION, Dataset, TimeSeriesSample, apply_normalization,
                   normalization_stats)
from .exceptions import InputError
from .model import predict_batch
from .training import TrainConfig, resolve_correlation, train


def check_mts(X, y=None, task: str = CLASSIFICATION, timestamps=None) -> Dataset:
    """Coerce supported inputs to a :class:`Dataset`, attaching ``y`` if given.

    Parameters
    ----------
    X : Dataset, sequence of TimeSeriesSample, or array-like of shape (N, T, D)
        Arrays use ``NaN`` for missing cells.
    y : array-like of shape (N,), optional
        Labels that replace any labels already stored on the samples.
    task : {"classification", "regression"}
    timestamps : array-like of shape (T,), optional
        Shared time axis for array input; defaults to ``0..T-1``.
    """
    if isinstance(X, Dataset):
        samples = list(X.samples)
    elif isinstance(X, (list, tuple)) and X and all(isinstance(s, TimeSeriesSample) for s in X):
        samples = list(X)
    else:
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 3:
            raise InputError(f"expected a (N, T, D) array, got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise InputError("X holds no samples")
        samples = [TimeSeriesSample.from_array(a, timestamps) for a in arr]
    if y is not None:
        y = np.asarray(y)
        if y.shape != (len(samples),):
            raise InputError(f"y has shape {y.shape}, expected ({len(samples)},)")
        samples = [TimeSeriesSample(s.values, s.mask, s.timestamps, label=lab.item())
                   for s, lab in zip(samples, y)]
    n_classes = None
    if task == CLASSIFICATION and y is not None:
        n_classes = int(np.max(y)) + 1
    return Dataset(tuple(samples), task=task, n_classes=n_classes)


_CONFIG_FIELDS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("task", "track_metrics"))


class _LIFEBase(BaseEstimator):
    _task = CLASSIFICATION

    def __init__(self, k=6, F=3, alpha=1.0, learning_rate=1e-3, batch_size=64, epochs=100, folds=5,
                 seed=0, source="pdtw", p=0.5, beta=1.0, epsilon=0.01, hidden_size=64,
                 pooling="dense", max_len=None, normalize=True, correlation_file=None, lr_decay=1.0,
                 patience=None, correlation=None):
        self.k = k
        self.F = F
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.folds = folds
        self.seed = seed
        self.source = source
        self.p = p
        self.beta = beta
        self.epsilon = epsilon
        self.hidden_size = hidden_size
        self.pooling = pooling
        self.max_len = max_len
        self.normalize = normalize
        self.correlation_file = correlation_file
        self.lr_decay = lr_decay
        self.patience = patience
        self.correlation = correlation

    def _config(self) -> TrainConfig:
        values = {name: getattr(self, name) for name in _CONFIG_FIELDS}
        return TrainConfig(task=self._task, track_metrics=False, **values)

    def _fit(self, dataset: Dataset):
        config = self._config()
        corr = None if self.correlation is None else check_correlation_matrix(self.correlation)
        self.model_, self.log_ = train(dataset, config, correlation=corr)
        self.correlation_ = self.model_.correlation
        self.n_features_in_ = dataset.n_dims
        return self

    def _prepared(self, X) -> Dataset:
        check_is_fitted(self, "model_")
        ds = check_mts(X, task=self._task)
        if ds.n_dims != self.n_features_in_:
            raise InputError(f"X has {ds.n_dims} dimensions, estimator was fitted on {self.n_features_in_}")
        if ds.max_len > self.model_.max_len:
            raise InputError(f"series of length {ds.max_len} exceed the fitted max_len {self.model_.max_len}")
        if self.model_.norm_mean is not None:
            ds = apply_normalization(ds, self.model_.norm_mean, self.model_.norm_std)
        return ds

    def _raw_output(self, X) -> np.ndarray:
        return predict_batch(self.model_, self._prepared(X).samples)


class LIFEClassifier(ClassifierMixin, _LIFEBase):
    """Correlation-gated attention network for incomplete series.

    Parameters mirror :class:`~lifemts.training.TrainConfig`; ``correlation``
    optionally fixes the gate matrix instead of extracting it from ``X``.

    Attributes
    ----------
    model_ : LifeModel
    log_ : list of dict
        Per-epoch training loss rows.
    correlation_ : ndarray of shape (D, D)
    classes_ : ndarray
    """

    _task = CLASSIFICATION

    def fit(self, X, y):
        check_classification_targets(y)
        self.classes_, encoded = np.unique(np.asarray(y), return_inverse=True)
        if self.classes_.size < 2:
            raise InputError("classification needs at least two classes")
        ds = check_mts(X, encoded, CLASSIFICATION)
        return self._fit(Dataset(ds.samples, CLASSIFICATION, n_classes=self.classes_.size))

    def predict_proba(self, X) -> np.ndarray:
        return self._raw_output(X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class LIFERegressor(RegressorMixin, _LIFEBase):
    """Regression counterpart of :class:`LIFEClassifier`."""

    _task = REGRESSION

    def fit(self, X, y):
        y = np.asarray(y, dtype=float)
        if not np.isfinite(y).all():
            raise InputError("regression targets must be finite")
        return self._fit(check_mts(X, y, REGRESSION))

    def predict(self, X) -> np.ndarray:
        return self._raw_output(X)


class CorrelationExtractor(BaseEstimator):
    """Estimate the dimension-correlation matrix of a collection of series.

    Parameters
    ----------
    source : str
        Any correlation source accepted by the training configuration.
    p, beta, epsilon : float
        Penalty coefficient, time weight and transport regularisation.
    seed : int
        Seed of the random ablation matrix.
    normalize : bool
        Z-score dimensions before extraction.
    """

    def __init__(self, source="pdtw", p=0.5, beta=1.0, epsilon=0.01, seed=0, normalize=True):
        self.source = source
        self.p = p
        self.beta = beta
        self.epsilon = epsilon
        self.seed = seed
        self.normalize = normalize

    def fit(self, X, y=None):
        ds = check_mts(X)
        if self.normalize:
            ds = apply_normalization(ds, *normalization_stats(ds))
        config = TrainConfig(source=self.source, p=self.p, beta=self.beta, epsilon=self.epsilon,
                             seed=self.seed)
        self.correlation_, self.diagnostics_ = resolve_correlation(ds, config)
        self.n_features_in_ = ds.n_dims
        return self


class ZScoreScaler(TransformerMixin, BaseEstimator):
    """Per-dimension z-scoring from observed cells only; missing stays missing."""

    def fit(self, X, y=None):
        self.mean_, self.scale_ = normalization_stats(check_mts(X))
        return self

    def transform(self, X) -> Dataset:
        check_is_fitted(self, "mean_")
        return apply_normalization(check_mts(X), self.mean_, self.scale_)

    def inverse_transform(self, X) -> Dataset:
        check_is_fitted(self, "mean_")
        ds = check_mts(X)
        return apply_normalization(ds, -self.mean_ / self.scale_, 1.0 / self.scale_)
