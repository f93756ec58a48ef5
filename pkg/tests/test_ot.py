import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp

from conftest import exact_ot
from lifemts.cme import DistanceSpec, check_correlation_matrix, cme_pipeline
from lifemts.data import Dataset, TimeSeriesSample
from lifemts.exceptions import InputError
from lifemts.ot import (SinkhornConfig, TransportProblem, cme_pot, pot_cost_matrix, pot_distance,
                        sinkhorn, taot_cost_matrix, taot_distance)
from lifemts.synthetic import make_planted_dataset


def uniform(n):
    return np.full(n, 1.0 / n)


# -- cost matrices -------------------------------------------------------------

def test_zero_diagonal_for_identical_series():
    a = np.array([0.5, -1.0, 2.0])
    ones = np.ones(3)
    C = pot_cost_matrix(a, a, ones, ones, ones, ones, beta=0.0, p=0.0)
    np.testing.assert_array_equal(np.diag(C), 0.0)


def test_p_zero_equals_taot_cost(rng):
    a, b = rng.normal(size=5), rng.normal(size=5)
    ma, mb = rng.integers(0, 2, 5), rng.integers(0, 2, 5)
    da, db = rng.uniform(0, 3, 5), rng.uniform(0, 3, 5)
    np.testing.assert_array_equal(pot_cost_matrix(a, b, ma, mb, da, db, 1.0, 0.0), taot_cost_matrix(a, b, 1.0))


def test_penalty_row_offset():
    a, b = np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 0.5])
    ma, mb = np.array([1, 0, 1]), np.ones(3)
    da, db = np.array([0.0, 1.0, 1.0]), np.array([0.0, 1.0, 1.0])
    diff = pot_cost_matrix(a, b, ma, mb, da, db, 1.0, 2.0) - pot_cost_matrix(a, b, ma, mb, da, db, 1.0, 0.0)
    np.testing.assert_allclose(diff[1], 2.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.delete(diff, 1, axis=0), 0.0, atol=1e-15)


def test_time_term_uses_zscored_positions():
    # positions 1..3 z-score to (-sqrt(1.5), 0, sqrt(1.5))
    C = taot_cost_matrix(np.zeros(3), np.zeros(3), beta=1.0)
    assert C[0, 2] == pytest.approx(6.0, rel=1e-12)
    assert C[0, 1] == pytest.approx(1.5, rel=1e-12)


def test_single_step_has_no_time_term():
    assert taot_cost_matrix([1.0], [3.0], beta=5.0)[0, 0] == 4.0


def test_time_zscore_with_real_timestamps():
    C = taot_cost_matrix(np.zeros(3), np.zeros(3), 1.0, times_a=[0, 1, 10], times_b=[0, 1, 10])
    assert C[0, 1] < C[1, 2]


@st.composite
def pot_inputs(draw, T=4):
    vec = arrays(np.float64, T, elements=st.floats(-3, 3))
    a, b = draw(vec), draw(vec)
    ma = draw(arrays(np.int8, T, elements=st.integers(0, 1)))
    mb = draw(arrays(np.int8, T, elements=st.integers(0, 1)))
    da = draw(arrays(np.float64, T, elements=st.floats(0, 4)))
    db = draw(arrays(np.float64, T, elements=st.floats(0, 4)))
    return a, b, ma, mb, da, db


@settings(max_examples=100, deadline=None)
@given(pot_inputs(), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5))
def test_cost_monotone_in_p_and_beta(inp, p, beta, extra):
    a, b, ma, mb, da, db = inp
    base = pot_cost_matrix(a, b, ma, mb, da, db, beta, p)
    assert (pot_cost_matrix(a, b, ma, mb, da, db, beta, p + extra) >= base).all()
    assert (pot_cost_matrix(a, b, ma, mb, da, db, beta + extra, p) >= base).all()


def test_cost_rejects_negative_parameters():
    with pytest.raises(InputError):
        pot_cost_matrix([0.0], [0.0], [1], [1], [0], [0], p=-1.0)
    with pytest.raises(InputError):
        taot_cost_matrix([0.0], [0.0], beta=-1.0)


# -- transport problems ----------------------------------------------------------

def test_problem_validation():
    with pytest.raises(InputError):
        TransportProblem(np.zeros((2, 2)), [0.5, 0.6], [0.5, 0.5])
    with pytest.raises(InputError):
        TransportProblem(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(InputError):
        TransportProblem(np.array([[0, np.inf], [0, 0]]), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(InputError):
        SinkhornConfig(epsilon=0.0)


# -- sinkhorn --------------------------------------------------------------------

def test_diagonal_transport():
    T = 4
    C = 10.0 * (1 - np.eye(T))
    res = sinkhorn(TransportProblem(C, uniform(T), uniform(T)))
    np.testing.assert_allclose(res.plan, np.eye(T) / T, atol=1e-9)
    assert res.distance == pytest.approx(0.0, abs=1e-9)


def test_two_point_distance_vanishes_with_epsilon():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    prob = TransportProblem(C, [0.5, 0.5], [0.5, 0.5])
    dists = [sinkhorn(prob, SinkhornConfig(epsilon=e)).distance for e in (1.0, 0.1, 0.01)]
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] < 1e-12
    assert exact_ot(C, np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0


def test_converged_runs_meet_tolerance(rng):
    for _ in range(20):
        n, m = rng.integers(1, 5, size=2)
        u, v = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        res = sinkhorn(TransportProblem(rng.uniform(0, 5, (n, m)), u, v), SinkhornConfig(0.05))
        assert (res.plan >= 0).all()
        if res.converged:
            err = max(np.abs(res.plan.sum(1) - u).max(), np.abs(res.plan.sum(0) - v).max())
            assert err <= 1e-6


def test_zero_mass_rows_are_empty():
    C = np.array([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]])
    res = sinkhorn(TransportProblem(C, [0.5, 0.0, 0.5], [0.5, 0.5]))
    np.testing.assert_array_equal(res.plan[1], 0.0)
    assert res.converged


def test_iteration_cap_reported():
    rng = np.random.default_rng(0)
    C = rng.uniform(0, 1, (4, 4))
    res = sinkhorn(TransportProblem(C, uniform(4), uniform(4)), SinkhornConfig(1e-3, max_iter=2, tol=1e-12))
    assert not res.converged and res.n_iter <= 2


def test_small_epsilon_does_not_underflow():
    C = np.array([[0.0, 50.0], [50.0, 0.0]])
    res = sinkhorn(TransportProblem(C, [0.3, 0.7], [0.6, 0.4]), SinkhornConfig(1e-4))
    assert np.isfinite(res.plan).all() and res.converged


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_distance_upper_bounds_exact_ot(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 5, size=2)
    u, v = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    C = rng.uniform(0, 3, (n, m))
    res = sinkhorn(TransportProblem(C, u, v), SinkhornConfig(epsilon=0.05, max_iter=100_000, tol=1e-10))
    exact = exact_ot(C, u, v)
    # the plan is feasible up to the marginal error, which bounds the deficit
    assert res.distance >= exact - 3.0 * C.max() * res.marginal_error - 1e-12


def test_approaches_exact_ot_as_epsilon_shrinks(rng):
    for _ in range(10):
        C = rng.uniform(0, 2, (4, 3))
        u, v = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(3))
        exact = exact_ot(C, u, v)
        gaps = [sinkhorn(TransportProblem(C, u, v), SinkhornConfig(e, 100_000, 1e-9)).distance - exact
                for e in (0.1, 1e-3)]
        assert abs(gaps[1]) <= 1e-3
        assert abs(gaps[1]) <= abs(gaps[0]) + 1e-9


# -- distances -----------------------------------------------------------------

def naive_entropic_value(C, u, v, eps, sweeps=20_000):
    """Plain log-domain Sinkhorn without annealing or stabilisation tricks."""
    f, g = np.zeros(len(u)), np.zeros(len(v))
    for _ in range(sweeps):
        f = eps * np.log(u) - eps * logsumexp((g[None, :] - C) / eps, axis=1)
        g = eps * np.log(v) - eps * logsumexp((f[:, None] - C) / eps, axis=0)
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    return float((P * C).sum())


def test_identical_series_distance_near_zero(rng):
    a = rng.normal(size=6)
    ones = np.ones(6)
    for beta in (1.0, 3.0):
        for p in (0.0, 0.5, 10.0):
            assert pot_distance(a, a, ones, ones, ones, ones, beta, p, SinkhornConfig(0.01)) < 1e-3
    # Without the time term, values closer than sqrt(epsilon) share mass, so
    # the smoothing bias is set by epsilon alone.
    for p in (0.0, 0.5, 10.0):
        assert pot_distance(a, a, ones, ones, ones, ones, 0.0, p, SinkhornConfig(1e-3)) < 1e-3


def test_entropic_value_matches_naive_reference(rng):
    a = rng.normal(size=6)
    C = taot_cost_matrix(a, a, 0.0)
    want = naive_entropic_value(C, uniform(6), uniform(6), 0.01)
    got = sinkhorn(TransportProblem(C, uniform(6), uniform(6)), SinkhornConfig(0.01, 100_000, 1e-12)).distance
    assert got == pytest.approx(want, rel=1e-8)


def test_pot_at_zero_penalty_is_taot(rng):
    a, b = rng.normal(size=5), rng.normal(size=5)
    ma, mb = rng.integers(0, 2, 5), rng.integers(0, 2, 5)
    da, db = rng.uniform(0, 3, 5), rng.uniform(0, 3, 5)
    assert pot_distance(a, b, ma, mb, da, db, 1.0, 0.0) == taot_distance(a, b, 1.0)


@settings(max_examples=40, deadline=None)
@given(pot_inputs(), st.floats(0, 3), st.floats(0.01, 3))
def test_distance_nondecreasing_in_p(inp, p, extra):
    a, b, ma, mb, da, db = inp
    cfg = SinkhornConfig(0.05)
    lo = pot_distance(a, b, ma, mb, da, db, 1.0, p, cfg)
    hi = pot_distance(a, b, ma, mb, da, db, 1.0, p + extra, cfg)
    assert hi >= lo - 1e-9


@settings(max_examples=40, deadline=None)
@given(pot_inputs(), st.floats(0, 3))
def test_distance_symmetric_under_swap(inp, p):
    a, b, ma, mb, da, db = inp
    cfg = SinkhornConfig(0.05, tol=1e-9, max_iter=50_000)
    ab = pot_distance(a, b, ma, mb, da, db, 1.0, p, cfg)
    ba = pot_distance(b, a, mb, ma, db, da, 1.0, p, cfg)
    assert ab == pytest.approx(ba, rel=1e-6, abs=1e-8)


def test_unequal_lengths_supported(rng):
    a, b = rng.normal(size=3), rng.normal(size=5)
    d = pot_distance(a, b, np.ones(3), np.ones(5), np.zeros(3), np.zeros(5))
    assert np.isfinite(d) and d >= 0


# -- correlation extraction ------------------------------------------------------

def test_cme_pot_identical_pair_is_one():
    r = np.random.default_rng(2)
    arrays = []
    for _ in range(3):
        x = r.normal(size=6)
        arrays.append(np.stack([x, x, r.normal(size=6)], axis=1))
    C = cme_pot(Dataset(tuple(TimeSeriesSample.from_array(a) for a in arrays))).correlation
    assert C[0, 1] == 1.0
    check_correlation_matrix(C)


def test_cme_pot_matches_pdtw_top_pair():
    ds = make_planted_dataset(30, 6, 16, pairs=((0, 1), (2, 3)), noise=0.1, task=None, seed=4)
    C_pot = cme_pot(ds).correlation
    C_dtw = cme_pipeline(ds, DistanceSpec("pdtw")).correlation
    iu = np.triu_indices(6, 1)

    def top(C, n=2):
        order = np.argsort(-C[iu], kind="stable")[:n]
        return {(int(iu[0][i]), int(iu[1][i])) for i in order}

    assert top(C_pot) == top(C_dtw) == {(0, 1), (2, 3)}
    check_correlation_matrix(C_pot)
