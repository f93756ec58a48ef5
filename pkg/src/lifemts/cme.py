"""Correlation-matrix extraction from incomplete multivariate series.

Every extractor follows the same recipe: compute a pairwise dissimilarity per
sample, average it across samples weighted by how many observations back each
pair, then turn the averaged dissimilarities into correlations in [0, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TimeSeriesSample, interpolate_values
from .dtw import _pdtw_kernel, missing_penalty
from .exceptions import InputError

logger = logging.getLogger(__name__)

KINDS = ("pdtw", "dtw_impute", "dtw_drop", "pot")


@dataclass(frozen=True)
class DistanceSpec:
    """Which dissimilarity feeds the extraction, and its parameters.

    ``dtw_impute`` is ``pdtw`` with ``p=0`` on interpolated data and
    ``dtw_drop`` runs plain DTW on the observed points only.
    """

    kind: str = "pdtw"
    p: float = 0.5
    beta: float = 1.0
    epsilon: float = 0.01
    max_iter: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown distance kind {self.kind!r}; expected one of {KINDS}")
        if self.p < 0:
            raise InputError(f"penalty coefficient must be non-negative, got {self.p}")
        if self.kind in ("dtw_impute", "dtw_drop") and self.p != 0:
            object.__setattr__(self, "p", 0.0)

    @property
    def interpolates(self) -> bool:
        return self.kind != "dtw_drop"


@dataclass
class CMEResult:
    correlation: np.ndarray
    mean_distance: np.ndarray
    weights: np.ndarray
    diagnostics: list = field(default_factory=list)


class PairwiseAccumulator:
    """Weighted running sums of per-sample pairwise quantities.

    Merging two accumulators is associative, so samples can be processed in
    any partition.
    """

    def __init__(self, n_dims: int):
        self.numerator = np.zeros((n_dims, n_dims))
        self.denominator = np.zeros((n_dims, n_dims))

    def add(self, values, weights):
        values = np.where(weights > 0, values, 0.0)
        self.numerator += weights * values
        self.denominator += weights

    def merge(self, other: "PairwiseAccumulator") -> "PairwiseAccumulator":
        out = PairwiseAccumulator(self.numerator.shape[0])
        out.numerator = self.numerator + other.numerator
        out.denominator = self.denominator + other.denominator
        return out

    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.denominator > 0, self.numerator / np.where(self.denominator > 0, self.denominator, 1.0), np.nan)


def check_correlation_matrix(C, atol: float = 1e-12) -> np.ndarray:
    """Validate symmetry, unit diagonal and the [0, 1] range."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InputError(f"correlation matrix must be square, got shape {C.shape}")
    if not np.isfinite(C).all():
        raise InputError("correlation matrix has non-finite entries")
    if not np.allclose(C, C.T, atol=atol):
        raise InputError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(C), 1.0, atol=atol):
        raise InputError("correlation matrix diagonal must be 1")
    if C.min() < -atol or C.max() > 1 + atol:
        raise InputError("correlation entries must lie in [0, 1]")
    return C


def distances_to_correlation(mean_distance, weights):
    """Min-max scale reciprocal distances over the off-diagonal.

    Zero distances become correlation 1. Pairs without any weight get 0 and
    are reported. If every finite reciprocal is equal they all map to 1.
    """
    D = mean_distance.shape[0]
    off = ~np.eye(D, dtype=bool)
    valid = off & (weights > 0)
    C = np.zeros((D, D))
    diagnostics = []
    for i, j in zip(*np.nonzero(np.triu(off & ~valid))):
        diagnostics.append({"pair": [int(i), int(j)], "issue": "zero total weight"})
    zero = valid & (mean_distance <= 0)
    finite = valid & ~zero
    if finite.any():
        recip = 1.0 / mean_distance[finite]
        lo, hi = recip.min(), recip.max()
        C[finite] = (recip - lo) / (hi - lo) if hi > lo else 1.0
    C[zero] = 1.0
    np.fill_diagonal(C, 1.0)
    C = 0.5 * (C + C.T)
    return C, diagnostics


def _pair_weights(mask) -> np.ndarray:
    counts = mask.sum(axis=0).astype(float)
    return counts[:, None] + counts[None, :]


def _sample_distances(sample: TimeSeriesSample, measure: DistanceSpec, penalties):
    """Dissimilarity matrices of one sample for each penalty coefficient.

    Returns ``(stack, Q, unconverged, solved)`` where ``stack`` has shape
    ``(len(penalties), D, D)``.
    """
    D = sample.n_dims
    P = len(penalties)
    S = np.zeros((P, D, D))
    Q = _pair_weights(sample.mask)
    np.fill_diagonal(Q, 0.0)
    if measure.kind == "dtw_drop":
        observed = [np.ascontiguousarray(sample.values[sample.mask[:, d] == 1, d]) for d in range(D)]
        for i in range(D):
            for j in range(i + 1, D):
                if observed[i].size == 0 or observed[j].size == 0:
                    Q[i, j] = Q[j, i] = 0.0
                    continue
                zi = np.zeros(observed[i].size)
                zj = np.zeros(observed[j].size)
                S[:, i, j] = S[:, j, i] = _pdtw_kernel(observed[i], observed[j], zi, zj)
        return S, Q, 0, 0

    X = interpolate_values(sample.values, sample.mask, sample.timestamps)
    if measure.kind == "pot":
        from .ot import SinkhornConfig, _pot_pair, taot_cost_matrix

        # The penalty adds a row term and a column term to the cost, which
        # leaves the entropic plan unchanged; one solve serves every p.
        config = SinkhornConfig(measure.epsilon, measure.max_iter, measure.tol)
        unit = missing_penalty(sample.mask, sample.intervals, 1.0)
        unconverged = solved = 0
        for i in range(D):
            for j in range(i + 1, D):
                _, res = _pot_pair(X[:, i], X[:, j], sample.mask[:, i], sample.mask[:, j],
                                   sample.intervals[:, i], sample.intervals[:, j],
                                   measure.beta, measure.p, config)
                solved += 1
                unconverged += not res.converged
                plan = res.plan
                base = float((plan * taot_cost_matrix(X[:, i], X[:, j], measure.beta)).sum())
                extra = float(plan.sum(axis=1) @ unit[:, i] + plan.sum(axis=0) @ unit[:, j])
                for k, p in enumerate(penalties):
                    S[k, i, j] = S[k, j, i] = base + p * extra
        return S, Q, unconverged, solved

    cols = [np.ascontiguousarray(X[:, d]) for d in range(D)]
    for k, p in enumerate(penalties):
        if measure.kind == "dtw_impute":
            p = 0.0
        pen = missing_penalty(sample.mask, sample.intervals, p)
        pens = [np.ascontiguousarray(pen[:, d]) for d in range(D)]
        for i in range(D):
            for j in range(i + 1, D):
                S[k, i, j] = S[k, j, i] = _pdtw_kernel(cols[i], cols[j], pens[i], pens[j])
    return S, Q, 0, 0


def pairwise_distances(sample: TimeSeriesSample, measure: DistanceSpec):
    """Per-sample dissimilarity matrix and pair weights for one sample."""
    S, Q, _, _ = _sample_distances(sample, measure, [measure.p])
    return S[0], Q


def cme_sweep(dataset: Dataset, measure: DistanceSpec | None = None, penalties=None) -> dict:
    """Extract one correlation matrix per penalty coefficient.

    Equivalent to calling :func:`cme_pipeline` with ``measure.p`` set to each
    value in turn; optimal-transport plans are solved once and shared.
    """
    measure = measure or DistanceSpec()
    penalties = [measure.p] if penalties is None else [float(p) for p in penalties]
    if any(p < 0 for p in penalties):
        raise InputError("penalty coefficients must be non-negative")
    if len(dataset) == 0:
        raise InputError("cannot extract correlations from an empty dataset")
    D = dataset.n_dims
    if D < 2:
        raise InputError("correlation extraction needs at least two dimensions")
    accs = [PairwiseAccumulator(D) for _ in penalties]
    unconverged = solved = 0
    for sample in dataset:
        S, Q, bad, n = _sample_distances(sample, measure, penalties)
        unconverged += bad
        solved += n
        for acc, S_p in zip(accs, S):
            acc.add(S_p, Q)
    out = {}
    for p, acc in zip(penalties, accs):
        mean = acc.mean()
        C, diagnostics = distances_to_correlation(np.nan_to_num(mean, nan=np.inf), acc.denominator)
        for item in diagnostics:
            logger.warning("pair %s has zero total weight; correlation set to 0", item["pair"])
        if unconverged:
            diagnostics.append({"issue": "sinkhorn not converged", "count": unconverged, "of": solved})
            logger.warning("%d of %d transport problems hit the iteration limit", unconverged, solved)
        out[p] = CMEResult(C, mean, acc.denominator, diagnostics)
    return out


def cme_pipeline(dataset: Dataset, measure: DistanceSpec | None = None) -> CMEResult:
    """Extract a correlation matrix with a distance-based extractor."""
    measure = measure or DistanceSpec()
    return cme_sweep(dataset, measure, [measure.p])[measure.p]


def pearson_cme(dataset: Dataset) -> CMEResult:
    """Weighted mean of |Pearson r| over co-observed timestamps.

    Each sample contributes with weight equal to its co-observed count; pairs
    with fewer than two co-observed points, or a constant segment, contribute
    zero weight or zero correlation respectively.
    """
    if len(dataset) == 0:
        raise InputError("cannot extract correlations from an empty dataset")
    D = dataset.n_dims
    if D < 2:
        raise InputError("correlation extraction needs at least two dimensions")
    acc = PairwiseAccumulator(D)
    for s in dataset:
        R = np.zeros((D, D))
        W = np.zeros((D, D))
        m = s.mask.astype(bool)
        for i in range(D):
            for j in range(i + 1, D):
                both = m[:, i] & m[:, j]
                n = int(both.sum())
                if n < 2:
                    continue
                a = s.values[both, i] - s.values[both, i].mean()
                b = s.values[both, j] - s.values[both, j].mean()
                den = np.sqrt((a * a).mean() * (b * b).mean())
                R[i, j] = R[j, i] = abs((a * b).mean()) / den if den > 0 else 0.0
                W[i, j] = W[j, i] = n
        acc.add(R, W)
    C = np.where(acc.denominator > 0, np.nan_to_num(acc.mean()), 0.0)
    C = np.clip(C, 0.0, 1.0)
    np.fill_diagonal(C, 1.0)
    diagnostics = []
    for i, j in zip(*np.nonzero(np.triu(acc.denominator == 0, k=1))):
        diagnostics.append({"pair": [int(i), int(j)], "issue": "zero total weight"})
        logger.warning("pair %s has no co-observed points; correlation set to 0", [int(i), int(j)])
    return CMEResult(C, 1.0 - C, acc.denominator, diagnostics)


def ones_matrix(n_dims: int) -> np.ndarray:
    return np.ones((n_dims, n_dims))


def diag_matrix(n_dims: int) -> np.ndarray:
    return np.eye(n_dims)


def rand_matrix(n_dims: int, seed: int | None = None) -> np.ndarray:
    """Uniform [0, 1] entries, symmetrised from the upper triangle, unit diagonal."""
    rng = np.random.default_rng(seed)
    U = np.triu(rng.random((n_dims, n_dims)), k=1)
    C = U + U.T
    np.fill_diagonal(C, 1.0)
    return C
