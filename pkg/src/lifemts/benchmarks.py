"""Experiment harnesses on the planted-correlation benchmarks.

These back the stability, ablation and damaged-sensor comparisons; each
returns plain dictionaries so callers can print or serialise the outcome.
"""
from __future__ import annotations

import numpy as np

from .cme import DistanceSpec, cme_sweep
from .data import Dataset, TimeSeriesSample, zscore_normalize
from .exceptions import InputError
from .metrics import kfold_split
from .synthetic import DEFAULT_PAIRS
from .training import TrainConfig, cross_validate, evaluate, prepare_for_model, train


def top_pairs(C, n: int) -> set:
    """The ``n`` largest off-diagonal entries of a symmetric matrix as index pairs."""
    C = np.asarray(C)
    iu = np.triu_indices(C.shape[0], k=1)
    order = np.argsort(-C[iu], kind="stable")[:n]
    return {(int(iu[0][i]), int(iu[1][i])) for i in order}


def cme_stability(dataset: Dataset, kind: str = "pdtw", planted=DEFAULT_PAIRS, low: float = 0.5,
                  high: float = 10.0, normalize: bool = True) -> dict:
    """Compare correlation matrices at penalties 0, ``low`` and ``high``.

    ``stable`` holds when the Frobenius distance between the ``low`` and
    ``high`` matrices is strictly smaller than between the 0 and ``low``
    matrices; ``planted_top`` when the planted pairs are the largest
    off-diagonal entries at ``low``.
    """
    if normalize:
        dataset = zscore_normalize(dataset)
    res = cme_sweep(dataset, DistanceSpec(kind, p=low), [0.0, low, high])
    C0, Cl, Ch = (res[p].correlation for p in (0.0, low, high))
    d_low_high = float(np.linalg.norm(Cl - Ch))
    d_zero_low = float(np.linalg.norm(C0 - Cl))
    planted = {tuple(sorted(p)) for p in planted}
    return {
        "kind": kind,
        "dist_low_high": d_low_high,
        "dist_zero_low": d_zero_low,
        "stable": d_low_high < d_zero_low,
        "top": sorted(top_pairs(Cl, len(planted))),
        "planted_top": top_pairs(Cl, len(planted)) == planted,
        "diagnostics": res[low].diagnostics,
    }


def ablation_accuracy(dataset: Dataset, sources, config: TrainConfig) -> dict:
    """Mean k-fold accuracy per correlation source, all other settings fixed."""
    out = {}
    for src in sources:
        cfg = TrainConfig.from_dict({**config.to_dict(), "source": src, "track_metrics": False})
        out[src] = cross_validate(dataset, cfg)["mean"]["accuracy"]
    return out


def nested_damage(dataset: Dataset, rate: float = 0.9, seed: int = 0):
    """Datasets with 0..D-1 damaged sensors, each set containing the previous one.

    A random order of the dimensions is drawn once; the first ``n`` are
    damaged in the ``n``-th dataset. Every cell also gets one uniform draw,
    so a cell dropped with ``n`` damaged sensors stays dropped for larger
    ``n``.

    Returns ``(order, datasets)``.
    """
    if not 0.0 <= rate <= 1.0:
        raise InputError(f"elimination rate {rate} not in [0, 1]")
    rng = np.random.default_rng(seed)
    D = dataset.n_dims
    order = [int(d) for d in rng.permutation(D)]
    draws = [rng.random(s.mask.shape) for s in dataset]
    out = []
    for n in range(D):
        damaged = np.zeros(D, dtype=bool)
        damaged[order[:n]] = True
        samples = []
        for s, u in zip(dataset, draws):
            mask = np.where(damaged[None, :] & (u < rate), 0, s.mask)
            samples.append(TimeSeriesSample(s.values, mask, s.timestamps, label=s.label))
        out.append(dataset.with_samples(samples))
    return order, out


def holdout_split(dataset: Dataset, test_fraction: float = 0.25, seed: int = 0):
    """One stratified train/test split taken from the k-fold partition."""
    folds = max(2, int(round(1.0 / test_fraction)))
    train_idx, test_idx = kfold_split(dataset.labels, folds, seed)[0]
    return dataset.subset(train_idx), dataset.subset(test_idx)


def damage_curve(dataset: Dataset, sources, config: TrainConfig, rate: float = 0.9,
                 seed: int = 0) -> dict:
    """Holdout accuracy per correlation source for 0..D-1 damaged sensors.

    The correlation matrix is extracted from the training split of each
    damaged dataset.
    """
    order, datasets = nested_damage(dataset, rate, seed)
    curves = {src: [] for src in sources}
    for ds in datasets:
        tr, te = holdout_split(ds, seed=seed)
        for src in sources:
            cfg = TrainConfig.from_dict({**config.to_dict(), "source": src, "track_metrics": False})
            model, _ = train(tr, cfg)
            curves[src].append(evaluate(model, prepare_for_model(model, te))["accuracy"])
    return {"order": order, "accuracy": curves}
