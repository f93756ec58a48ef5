"""Entropy-regularised optimal transport between univariate series.

The ground cost combines squared value differences, a weighted squared
difference of z-scored time indices, and the same missingness penalty used by
penalty DTW. With ``p=0`` the cost reduces to the time-adaptive cost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .cme import CMEResult, DistanceSpec, cme_pipeline
from .dtw import missing_penalty
from .exceptions import InputError


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.01
    max_iter: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InputError(f"regularisation must be positive, got {self.epsilon}")
        if self.max_iter < 1 or self.tol <= 0:
            raise InputError("max_iter and tol must be positive")


@dataclass(frozen=True, eq=False)
class TransportProblem:
    cost: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        cost = np.ascontiguousarray(self.cost, dtype=np.float64)
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if cost.shape != (u.size, v.size):
            raise InputError(f"cost shape {cost.shape} does not match marginals ({u.size}, {v.size})")
        if not np.isfinite(cost).all():
            raise InputError("cost matrix must be finite")
        for name, w in (("u", u), ("v", v)):
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
                raise InputError(f"marginal {name} must be a probability vector")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


@dataclass
class SinkhornResult:
    distance: float
    plan: np.ndarray
    converged: bool
    n_iter: int
    marginal_error: float


@nb.njit(cache=True)
def _gibbs(f, g, C, eps, K):
    # Kernel relative to the current potentials; the current plan when the
    # scalings are all ones.
    n, m = C.shape
    for i in range(n):
        for j in range(m):
            K[i, j] = np.exp((f[i] + g[j] - C[i, j]) / eps)


@nb.njit(cache=True)
def _marginal_error(K, a, b, u, v):
    n, m = K.shape
    err = 0.0
    col = np.zeros(m)
    for i in range(n):
        acc = 0.0
        for j in range(m):
            x = K[i, j] * b[j]
            acc += x
            col[j] += a[i] * x
        err = max(err, abs(a[i] * acc - u[i]))
    for j in range(m):
        err = max(err, abs(col[j] - v[j]))
    return err


@nb.njit(cache=True)
def _absorb(f, g, a, b, eps):
    for i in range(f.size):
        f[i] += eps * np.log(a[i])
        a[i] = 1.0
    for j in range(g.size):
        g[j] += eps * np.log(b[j])
        b[j] = 1.0


@nb.njit(cache=True, fastmath={"contract", "reassoc", "nsz", "arcp"})
def _sinkhorn_stabilized(C, u, v, eps_target, max_iter, tol, check_every=10, absorb_at=1e50):
    n, m = C.shape
    f = np.zeros(n)
    g = np.zeros(m)
    a = np.ones(n)
    b = np.ones(m)
    K = np.empty((n, m))
    Kt = np.empty((m, n))
    eps = max(C.max(), eps_target)
    _gibbs(f, g, C, eps, K)
    Kt[:, :] = K.T
    it = 0
    err = np.inf
    while True:
        final = eps <= eps_target
        stage_tol = tol if final else max(tol, 1e-3)
        since_check = 0
        while it < max_iter:
            for i in range(n):
                acc = 0.0
                for j in range(m):
                    acc += K[i, j] * b[j]
                if acc > 0:
                    a[i] = u[i] / acc
            for j in range(m):
                acc = 0.0
                for i in range(n):
                    acc += Kt[j, i] * a[i]
                if acc > 0:
                    b[j] = v[j] / acc
            it += 1
            since_check += 1
            big = False
            for i in range(n):
                if a[i] > absorb_at or a[i] < 1.0 / absorb_at:
                    big = True
            for j in range(m):
                if b[j] > absorb_at or b[j] < 1.0 / absorb_at:
                    big = True
            if big:
                _absorb(f, g, a, b, eps)
                _gibbs(f, g, C, eps, K)
                Kt[:, :] = K.T
            if since_check >= check_every or it >= max_iter:
                since_check = 0
                err = _marginal_error(K, a, b, u, v)
                if err <= stage_tol:
                    break
        _absorb(f, g, a, b, eps)
        if final or it >= max_iter:
            break
        eps = max(0.5 * eps, eps_target)
        _gibbs(f, g, C, eps, K)
        Kt[:, :] = K.T
    plan = np.empty((n, m))
    _gibbs(f, g, C, eps, plan)
    return plan, it, _marginal_error(plan, np.ones(n), np.ones(m), u, v)


def sinkhorn(problem: TransportProblem, config: SinkhornConfig | None = None) -> SinkhornResult:
    """Stabilised Sinkhorn with geometric annealing of the regularisation.

    Scalings are updated in the kernel domain and absorbed into log-domain
    potentials whenever they leave ``[1e-50, 1e50]`` and at every change of
    the regularisation, so small ``epsilon`` does not underflow.

    Stops once the largest marginal violation falls below ``config.tol`` at the
    target regularisation, or after ``config.max_iter`` sweeps in total. Zero
    marginal entries are dropped before solving and re-inserted as empty rows.

    Row and then column minima are subtracted from the cost before solving.
    Such shifts only move the dual potentials, so the plan is unchanged, but a
    separable term such as the missingness penalty no longer inflates the
    range that the annealing has to cover. The distance is always evaluated
    on the original cost.
    """
    config = config or SinkhornConfig()
    rows = problem.u > 0
    cols = problem.v > 0
    C = problem.cost[np.ix_(rows, cols)]
    C = C - C.min(axis=1, keepdims=True)
    C = np.ascontiguousarray(C - C.min(axis=0, keepdims=True))
    plan_sub, n_iter, err = _sinkhorn_stabilized(C, problem.u[rows], problem.v[cols],
                                          config.epsilon, config.max_iter, config.tol)
    plan = np.zeros(problem.cost.shape)
    plan[np.ix_(rows, cols)] = plan_sub
    distance = float((plan * problem.cost).sum())
    return SinkhornResult(distance, plan, bool(err <= config.tol), int(n_iter), float(err))


def _zscore_index(n: int, times=None) -> np.ndarray:
    t = np.arange(1, n + 1, dtype=float) if times is None else np.asarray(times, dtype=float)
    sd = t.std()
    if n < 2 or sd == 0:
        return np.zeros(n)
    return (t - t.mean()) / sd


def taot_cost_matrix(a, b, beta: float = 1.0, times_a=None, times_b=None) -> np.ndarray:
    """Squared value difference plus ``beta`` times squared z-scored time gap."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if beta < 0:
        raise InputError(f"time weight must be non-negative, got {beta}")
    ta = _zscore_index(a.size, times_a)
    tb = _zscore_index(b.size, times_b)
    return (a[:, None] - b[None, :]) ** 2 + beta * (ta[:, None] - tb[None, :]) ** 2


def pot_cost_matrix(a, b, ma, mb, da, db, beta: float = 1.0, p: float = 0.5,
                    times_a=None, times_b=None) -> np.ndarray:
    """Time-adaptive cost plus the missingness penalty of both endpoints.

    ``times_a``/``times_b`` z-score real timestamps instead of the positions
    1..T when given.
    """
    if p < 0:
        raise InputError(f"penalty coefficient must be non-negative, got {p}")
    cost = taot_cost_matrix(a, b, beta, times_a, times_b)
    pa = missing_penalty(ma, da, p)
    pb = missing_penalty(mb, db, p)
    return cost + pa[:, None] + pb[None, :]


def _pot_pair(a, b, ma, mb, da, db, beta, p, config, times_a=None, times_b=None):
    cost = pot_cost_matrix(a, b, ma, mb, da, db, beta, p, times_a, times_b)
    u = np.full(cost.shape[0], 1.0 / cost.shape[0])
    v = np.full(cost.shape[1], 1.0 / cost.shape[1])
    res = sinkhorn(TransportProblem(cost, u, v), config)
    return res.distance, res


def pot_distance(a, b, ma, mb, da, db, beta: float = 1.0, p: float = 0.5,
                 config: SinkhornConfig | None = None, times_a=None, times_b=None) -> float:
    """Sinkhorn distance between two imputed series under uniform weights."""
    dist, _ = _pot_pair(a, b, ma, mb, da, db, beta, p, config or SinkhornConfig(), times_a, times_b)
    return dist


def taot_distance(a, b, beta: float = 1.0, config: SinkhornConfig | None = None) -> float:
    cost = taot_cost_matrix(a, b, beta)
    u = np.full(cost.shape[0], 1.0 / cost.shape[0])
    v = np.full(cost.shape[1], 1.0 / cost.shape[1])
    return sinkhorn(TransportProblem(cost, u, v), config or SinkhornConfig()).distance


def cme_pot(dataset, beta: float = 1.0, p: float = 0.5,
            config: SinkhornConfig | None = None) -> CMEResult:
    config = config or SinkhornConfig()
    measure = DistanceSpec("pot", p=p, beta=beta, epsilon=config.epsilon,
                        max_iter=config.max_iter, tol=config.tol)
    return cme_pipeline(dataset, measure)
