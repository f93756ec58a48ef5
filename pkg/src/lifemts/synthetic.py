"""Planted-correlation benchmark generator.

Dimensions come in planted pairs that share a smooth latent signal, plus
independent filler dimensions. Labels, when requested, depend only on the
planted pairs.
"""
from __future__ import annotations

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset, TimeSeriesSample, inject_damaged_sensors
from .exceptions import InputError

DEFAULT_PAIRS = ((0, 1), (2, 3), (4, 5))


def smooth_signal(rng, length: int, n_waves: int = 3) -> np.ndarray:
    """Sum of random sinusoids plus a small AR(1) wander."""
    t = np.linspace(0.0, 1.0, length)
    freq = rng.uniform(0.5, 3.0, n_waves)
    phase = rng.uniform(0, 2 * np.pi, n_waves)
    amp = rng.uniform(0.5, 1.5, n_waves)
    x = (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * t + phase[:, None])).sum(axis=0)
    ar = np.zeros(length)
    eps = rng.normal(scale=0.2, size=length)
    for i in range(1, length):
        ar[i] = 0.7 * ar[i - 1] + eps[i]
    return x + ar


def slow_signal(rng, length: int) -> np.ndarray:
    """A per-sample level with a gentle linear drift."""
    return rng.normal() + rng.normal(scale=0.3) * np.linspace(-1.0, 1.0, length)


def planted_values(rng, n_dims: int, length: int, pairs, noise: float, filler: str = "smooth"):
    X = np.empty((length, n_dims))
    paired = set()
    latents = []
    for i, j in pairs:
        z = smooth_signal(rng, length)
        latents.append(z)
        X[:, i] = z + noise * rng.normal(size=length)
        X[:, j] = z + noise * rng.normal(size=length)
        paired.update((i, j))
    for d in range(n_dims):
        if d not in paired:
            X[:, d] = smooth_signal(rng, length) if filler == "smooth" else slow_signal(rng, length)
    return X, latents


def _check_pairs(pairs, n_dims):
    flat = [d for pair in pairs for d in pair]
    if len(set(flat)) != len(flat) or min(flat) < 0 or max(flat) >= n_dims:
        raise InputError(f"pairs {pairs} must be disjoint indices below {n_dims}")


LABEL_RULES = ("lag", "level", "trend", "amplitude")
AMPLITUDE_RATIO = 2.0


def _label(rule: str, latents, window: slice) -> int:
    if rule == "level":
        return int(latents[0][window].mean() + latents[1][window].mean() > 0)
    if rule == "trend":
        z = latents[0][window] + latents[1][window]
        half = z.size // 2
        return int(z[half:].mean() > z[:half].mean())
    raise InputError(f"unknown label rule {rule!r}; expected one of {LABEL_RULES}")


def make_planted_dataset(n_samples: int = 200, n_dims: int = 8, length: int = 24,
                         pairs=DEFAULT_PAIRS, noise: float = 0.1, task: str | None = CLASSIFICATION,
                         step: float = 1.0, filler: str = "smooth", label_rule: str = "lag",
                         seed: int | None = 0) -> Dataset:
    """Fully observed planted-correlation data.

    Classification labels follow ``label_rule``:

    ``lag``
        whether the partners of the first planted pair move in step (class 1)
        or with one of them delayed by a quarter of the window (class 0);
    ``level``
        whether the summed means of the first two planted latents are positive;
    ``trend``
        whether that sum is higher in the second half of the window;
    ``amplitude``
        whether the first planted latent is scaled up by ``AMPLITUDE_RATIO``.

    For regression the target is the mean of the first planted latent.
    """
    _check_pairs(pairs, n_dims)
    if task == CLASSIFICATION and label_rule not in LABEL_RULES:
        raise InputError(f"unknown label rule {label_rule!r}; expected one of {LABEL_RULES}")
    if task == CLASSIFICATION and label_rule != "lag" and len(pairs) < 2:
        raise InputError(f"label rule {label_rule!r} needs at least two planted pairs")
    rng = np.random.default_rng(seed)
    samples = []
    shift = max(1, length // 4)
    window = slice(shift, None)
    for n in range(n_samples):
        X, latents = planted_values(rng, n_dims, length + shift, pairs, noise, filler)
        label = None
        if task == CLASSIFICATION:
            if label_rule == "amplitude":
                label = n % 2
                if label == 1:
                    i, j = pairs[0]
                    z = latents[0]
                    X[:, i] += (AMPLITUDE_RATIO - 1.0) * z
                    X[:, j] += (AMPLITUDE_RATIO - 1.0) * z
            elif label_rule == "lag":
                label = n % 2
                if label == 0:
                    i, j = pairs[0]
                    X[:, j] = np.roll(X[:, j], shift)
            else:
                label = _label(label_rule, latents, window)
        elif task == REGRESSION:
            label = float(latents[0][window].mean())
        samples.append(TimeSeriesSample.from_array(X[window], step * np.arange(length), label=label))
    order = rng.permutation(n_samples)
    samples = [samples[i] for i in order]
    return Dataset(tuple(samples), task=task or CLASSIFICATION, n_classes=2 if task == CLASSIFICATION else None)


def inject_grouped_missingness(dataset: Dataset, groups, levels=(0.1, 0.7),
                               seed: int | None = 0) -> Dataset:
    """Drop cells with a missing rate drawn per sample and per group.

    Dimensions in one group share the drawn rate (think of sensors on one
    device, or lab values measured in one panel) but their cells are dropped
    independently.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0 or (levels < 0).any() or (levels > 1).any():
        raise InputError("levels must be rates in [0, 1]")
    covered = sorted(d for g in groups for d in g)
    if len(set(covered)) != len(covered) or (covered and (covered[0] < 0 or covered[-1] >= dataset.n_dims)):
        raise InputError(f"groups {groups} must be disjoint indices below {dataset.n_dims}")
    rng = np.random.default_rng(seed)
    samples = []
    for s in dataset:
        mask = s.mask.copy()
        for g in groups:
            g = list(g)
            rate = rng.choice(levels)
            drop = rng.random((s.n_timestamps, len(g))) < rate
            mask[:, g] = np.where(drop, 0, mask[:, g])
        samples.append(TimeSeriesSample(s.values, mask, s.timestamps, label=s.label))
    return dataset.with_samples(samples)


def inject_rates(dataset: Dataset, rates, seed: int | None = 0) -> Dataset:
    """Drop observed cells of dimension d with probability ``rates[d]``."""
    rates = np.broadcast_to(np.asarray(rates, dtype=float), (dataset.n_dims,))
    rng = np.random.default_rng(seed)
    for rate in np.unique(rates):
        if rate <= 0:
            continue
        dims = np.flatnonzero(rates == rate)
        dataset = inject_damaged_sensors(dataset, dims, float(rate), int(rng.integers(2**31)))
    return dataset


CME_GROUPS = ((0, 1), (2, 3), (4, 5), (6,), (7,))


def planted_cme_benchmark(seed: int = 0, n_samples: int = 200, length: int = 24) -> Dataset:
    """Eight dimensions with three planted pairs and about 40% missing cells.

    Each planted pair is treated as co-measured: per sample it shares a
    missing rate of 0.1 or 0.7 with its partner, while each filler draws its
    own. Timestamps advance by 3 units per step.
    """
    ds = make_planted_dataset(n_samples, 8, length, DEFAULT_PAIRS, noise=0.2, task=None, step=3.0, seed=seed)
    return inject_grouped_missingness(ds, CME_GROUPS, (0.1, 0.7), seed=seed + 100)


def planted_classification_benchmark(seed: int = 0, n_samples: int = 200, length: int = 24,
                                     n_dims: int = 8) -> Dataset:
    """Amplitude classification on the planted pairs; 70% of the cells of one
    partner in each pair are removed."""
    ds = make_planted_dataset(n_samples, n_dims, length, DEFAULT_PAIRS, noise=0.2, task=CLASSIFICATION,
                              label_rule="amplitude", seed=seed)
    rates = np.zeros(n_dims)
    rates[[j for _, j in DEFAULT_PAIRS]] = 0.7
    return inject_rates(ds, rates, seed=seed + 1000)


def small_dataset(seed: int = 0, task: str = CLASSIFICATION) -> Dataset:
    """Three samples, three dimensions, lengths 6/4/6 with missing cells,
    including a dimension missing at t=0; sized for gradient checks."""
    rng = np.random.default_rng(seed)
    samples = []
    for n, T in enumerate((6, 4, 6)):
        X = rng.normal(size=(T, 3))
        X[rng.random((T, 3)) < 0.3] = np.nan
        X[0, n % 3] = np.nan
        X[1, (n + 1) % 3] = 1.0
        label = n % 2 if task == CLASSIFICATION else float(rng.normal())
        samples.append(TimeSeriesSample.from_array(X, label=label))
    return Dataset(tuple(samples), task=task, n_classes=2 if task == CLASSIFICATION else None)


SYNTH_PRESETS = {
    "cme": planted_cme_benchmark,
    "classification": planted_classification_benchmark,
    "small": small_dataset,
}


def make_synthetic(preset: str, task: str = CLASSIFICATION, seed: int = 0, **overrides) -> Dataset:
    """Dataset from a named preset; ``cme`` and ``classification`` accept
    ``n_samples`` and ``length``, ``classification`` also ``n_dims``."""
    if preset not in SYNTH_PRESETS:
        raise InputError(f"unknown preset {preset!r}; expected one of {sorted(SYNTH_PRESETS)}")
    if preset == "small":
        if overrides:
            raise InputError("the small preset takes no size overrides")
        return small_dataset(seed, task)
    if preset == "cme":
        if "n_dims" in overrides:
            raise InputError("the cme preset has a fixed dimension count of 8")
        ds = planted_cme_benchmark(seed, **overrides)
        if task == REGRESSION:
            raise InputError("the cme preset is unlabeled; use it for correlation extraction")
        return ds
    if task == REGRESSION:
        raise InputError("the classification preset has class labels only")
    return planted_classification_benchmark(seed, **overrides)
