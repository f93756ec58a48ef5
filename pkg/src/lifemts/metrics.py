from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import rankdata

from .exceptions import InputError


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Tied scores between a positive and a negative count as half a win.
    """
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise InputError("AUC is undefined when only one class is present")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(labels, probabilities) -> float:
    y = np.asarray(labels).astype(int)
    return float((np.argmax(probabilities, axis=1) == y).mean())


def mean_absolute_error(targets, predictions) -> float:
    return float(np.abs(np.asarray(targets, float) - np.asarray(predictions, float)).mean())


def kfold_split(labels, folds: int = 5, seed: int | None = None, stratify: bool = True):
    """Seeded (stratified) k-fold partition as ``[(train_idx, test_idx), ...]``.

    Indices of each class are shuffled and then dealt round-robin, so every
    fold holds within one sample of its share of each class.
    """
    labels = np.asarray(labels)
    N = labels.shape[0]
    if folds < 2 or folds > N:
        raise InputError(f"need 2 <= folds <= {N}, got {folds}")
    rng = np.random.default_rng(seed)
    if stratify:
        classes, counts = np.unique(labels, return_counts=True)
        if (counts < folds).any():
            warnings.warn(f"classes {classes[counts < folds].tolist()} have fewer members "
                          f"than {folds} folds; stratification is best-effort", stacklevel=2)
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])
    else:
        order = rng.permutation(N)
    assign = np.empty(N, dtype=np.int64)
    assign[order] = np.arange(N) % folds
    all_idx = np.arange(N)
    return [(all_idx[assign != f], all_idx[assign == f]) for f in range(folds)]
