"""Data model for incomplete multivariate time series.

A sample stores its values with ``NaN`` in unobserved cells, but the mask is
the authority on what was observed: values are only read arithmetically where
``mask == 1`` unless an explicit fill operation has been applied.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InputError

CLASSIFICATION = "classification"
REGRESSION = "regression"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def compute_intervals(timestamps, mask) -> np.ndarray:
    """Time elapsed since the last observation of each dimension.

    Row 0 is all zeros. For ``t > 0`` the gap grows by the step size while the
    previous cell is missing and resets to the step size after an observation.
    """
    s = np.asarray(timestamps, dtype=float)
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2 or s.ndim != 1 or m.shape[0] != s.shape[0]:
        raise InputError(f"mask shape {m.shape} does not match {s.shape[0]} timestamps")
    if s.size > 1 and not np.all(np.diff(s) > 0):
        raise InputError("timestamps must be strictly increasing")
    delta = np.zeros(m.shape, dtype=float)
    for t in range(1, s.shape[0]):
        step = s[t] - s[t - 1]
        delta[t] = step + np.where(m[t - 1], 0.0, delta[t - 1])
    return delta


def last_observed_index(mask) -> np.ndarray:
    """Index of the most recent observation strictly before ``t``, or -1."""
    m = np.asarray(mask).astype(bool)
    out = np.full(m.shape, -1, dtype=np.int64)
    for t in range(1, m.shape[0]):
        out[t] = np.where(m[t - 1], t - 1, out[t - 1])
    return out


@dataclass(frozen=True, eq=False)
class TimeSeriesSample:
    """One multivariate series of shape ``(T, D)`` with its missingness."""

    values: np.ndarray
    mask: np.ndarray
    timestamps: np.ndarray
    intervals: np.ndarray | None = None
    label: float | int | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError(f"values must be 2-D (T, D), got shape {values.shape}")
        mask = np.array(self.mask).astype(np.int8)
        if mask.shape != values.shape:
            raise InputError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not np.isin(mask, (0, 1)).all():
            raise InputError("mask must be binary")
        ts = np.array(self.timestamps, dtype=float)
        if ts.shape != (values.shape[0],):
            raise InputError(f"expected {values.shape[0]} timestamps, got {ts.shape}")
        if values.shape[0] == 0:
            raise InputError("a sample needs at least one timestamp")
        values[mask == 0] = np.nan
        if not np.isfinite(values[mask == 1]).all():
            raise InputError("observed values must be finite")
        delta = compute_intervals(ts, mask)
        if self.intervals is not None:
            given = np.asarray(self.intervals, dtype=float)
            if given.shape != delta.shape or not np.allclose(given, delta, rtol=1e-9, atol=1e-12):
                raise InputError("intervals inconsistent with timestamps and mask")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "intervals", _readonly(delta))

    @classmethod
    def from_array(cls, values, timestamps=None, label=None) -> "TimeSeriesSample":
        """Build a sample from a ``(T, D)`` array where ``NaN`` marks missing."""
        values = np.asarray(values, dtype=float)
        if timestamps is None:
            timestamps = np.arange(values.shape[0], dtype=float)
        return cls(values, ~np.isnan(values), timestamps, label=label)

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    def filled(self, fill_value: float = 0.0) -> np.ndarray:
        """Values with unobserved cells replaced by ``fill_value``."""
        return np.where(self.mask == 1, self.values, fill_value)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of samples sharing the same number of dimensions."""

    samples: tuple
    task: str = CLASSIFICATION
    n_classes: int | None = None
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise InputError(f"unknown task {self.task!r}")
        dims = {s.n_dims for s in samples}
        if len(dims) > 1:
            raise InputError(f"samples disagree on dimension count: {sorted(dims)}")
        if self.task == CLASSIFICATION and self.n_classes is None:
            labels = [s.label for s in samples if s.label is not None]
            if labels:
                object.__setattr__(self, "n_classes", int(max(labels)) + 1)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]

    @property
    def n_dims(self) -> int:
        if not self.samples:
            return 0
        return self.samples[0].n_dims

    @property
    def labels(self) -> np.ndarray:
        dtype = np.int64 if self.task == CLASSIFICATION else float
        if any(s.label is None for s in self.samples):
            raise InputError("dataset contains unlabeled samples")
        return np.array([s.label for s in self.samples], dtype=dtype)

    @property
    def max_len(self) -> int:
        return max((s.n_timestamps for s in self.samples), default=0)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return replace(self, samples=tuple(self.samples[i] for i in indices))

    def with_samples(self, samples: Sequence[TimeSeriesSample]) -> "Dataset":
        return replace(self, samples=tuple(samples))


def missing_counts(dataset: Dataset) -> np.ndarray:
    """Number of unobserved cells per dimension."""
    out = np.zeros(dataset.n_dims, dtype=np.int64)
    for s in dataset:
        out += (s.mask == 0).sum(axis=0)
    return out


def average_missing_rate(dataset: Dataset) -> float:
    total = sum(s.mask.size for s in dataset)
    if total == 0:
        return 0.0
    return float(missing_counts(dataset).sum() / total)


def normalization_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Pooled per-dimension mean and population std over observed cells.

    A zero-variance dimension gets a std of 1 so it maps to all zeros.
    """
    D = dataset.n_dims
    total = np.zeros(D)
    count = np.zeros(D)
    for s in dataset:
        total += s.filled(0.0).sum(axis=0)
        count += s.mask.sum(axis=0)
    if np.any(count == 0):
        empty = np.flatnonzero(count == 0).tolist()
        raise InputError(f"dimensions {empty} have no observed values")
    mean = total / count
    sq = np.zeros(D)
    for s in dataset:
        sq += (np.where(s.mask == 1, s.values - mean, 0.0) ** 2).sum(axis=0)
    std = np.sqrt(sq / count)
    std[std == 0] = 1.0
    return mean, std


def apply_normalization(dataset: Dataset, mean, std) -> Dataset:
    """Z-score every sample with externally supplied statistics."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if mean.shape != (dataset.n_dims,) or std.shape != (dataset.n_dims,):
        raise InputError("normalization statistics do not match the dimension count")
    samples = [replace(s, values=(s.values - mean) / std, intervals=None) for s in dataset]
    return replace(dataset, samples=tuple(samples), norm_mean=mean, norm_std=std)


def zscore_normalize(dataset: Dataset) -> Dataset:
    mean, std = normalization_stats(dataset)
    return apply_normalization(dataset, mean, std)


def inverse_normalize(dataset: Dataset) -> Dataset:
    if dataset.norm_mean is None:
        raise InputError("dataset carries no normalization statistics")
    samples = [
        replace(s, values=s.values * dataset.norm_std + dataset.norm_mean, intervals=None)
        for s in dataset
    ]
    return replace(dataset, samples=tuple(samples), norm_mean=None, norm_std=None)


def interpolate_values(values, mask, timestamps) -> np.ndarray:
    """Linear interpolation in timestamp space, holding the nearest
    observation at the edges; an all-missing column becomes 0."""
    out = np.zeros(values.shape, dtype=float)
    m = np.asarray(mask).astype(bool)
    for d in range(values.shape[1]):
        obs = m[:, d]
        if obs.any():
            out[:, d] = np.interp(timestamps, timestamps[obs], values[obs, d])
    return out


def linear_interpolate(sample: TimeSeriesSample) -> TimeSeriesSample:
    filled = interpolate_values(sample.values, sample.mask, sample.timestamps)
    # Bypass __post_init__'s NaN re-masking: filled cells must survive.
    out = replace(sample)
    object.__setattr__(out, "values", _readonly(filled))
    return out


def inject_damaged_sensors(dataset: Dataset, damaged_indices, elimination_rate: float,
                           seed: int | None = None) -> Dataset:
    """Drop each observed cell of the damaged dimensions with probability
    ``elimination_rate``. Missing cells never become observed."""
    idx = np.asarray(sorted(set(int(i) for i in damaged_indices)), dtype=np.int64)
    D = dataset.n_dims
    if idx.size and (idx.min() < 0 or idx.max() >= D):
        raise InputError(f"damaged indices {idx.tolist()} out of range for D={D}")
    if not 0.0 <= elimination_rate <= 1.0:
        raise InputError(f"elimination rate {elimination_rate} not in [0, 1]")
    if idx.size == 0:
        return dataset
    rng = np.random.default_rng(seed)
    samples = []
    for s in dataset:
        drop = rng.random((s.n_timestamps, idx.size)) < elimination_rate
        mask = s.mask.copy()
        mask[:, idx] = np.where(drop, 0, mask[:, idx])
        samples.append(TimeSeriesSample(s.values, mask, s.timestamps, label=s.label))
    return replace(dataset, samples=tuple(samples))


def subvector(u, k: int, d: int) -> np.ndarray:
    """The ``d``-th (0-based) block of length ``k`` of ``u``."""
    u = np.asarray(u)
    if k < 1 or u.shape[-1] % k:
        raise InputError(f"length {u.shape[-1]} is not a multiple of k={k}")
    n_blocks = u.shape[-1] // k
    if not 0 <= d < n_blocks:
        raise InputError(f"sub-vector index {d} out of range [0, {n_blocks})")
    return u[..., k * d:k * (d + 1)]
