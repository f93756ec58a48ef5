import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset, random_sample
from lifemts.cme import diag_matrix, rand_matrix
from lifemts.data import CLASSIFICATION, REGRESSION, Dataset, TimeSeriesSample
from lifemts.exceptions import InputError
from lifemts.io import write_correlation_csv
from lifemts.model import embed, init_model, loss_and_grad, make_batch
from lifemts.synthetic import make_planted_dataset, small_dataset
from lifemts.training import (AdamState, TrainConfig, adam_step, check_instance, cross_validate,
                              evaluate, gradient_check, resolve_correlation, train)


# -- config ---------------------------------------------------------------------

def test_config_defaults():
    c = TrainConfig()
    assert (c.k, c.F, c.alpha, c.p, c.learning_rate, c.batch_size) == (6, 3, 1.0, 0.5, 1e-3, 64)


@pytest.mark.parametrize("bad", [{"k": 0}, {"folds": 1}, {"alpha": -1.0}, {"source": "x"}, {"source": "file"}])
def test_config_rejects(bad):
    with pytest.raises(InputError):
        TrainConfig(**bad)


def test_config_roundtrip_and_unknown_keys():
    c = TrainConfig(k=3, source="ones")
    assert TrainConfig.from_dict(c.to_dict()) == c
    with pytest.raises(InputError):
        TrainConfig.from_dict({"kk": 1})


# -- Adam -----------------------------------------------------------------------

def _tiny_model():
    return init_model(np.eye(2), k=1, max_len=3, n_classes=2, random_state=0)


def test_adam_zero_gradient_leaves_parameters():
    m = _tiny_model()
    before = {k: v.copy() for k, v in m.params.items()}
    adam_step(m, {k: np.zeros_like(v) for k, v in m.params.items()}, AdamState())
    for k, v in m.params.items():
        np.testing.assert_array_equal(v, before[k])


def test_adam_first_step_moves_by_learning_rate():
    m = _tiny_model()
    before = {k: v.copy() for k, v in m.params.items()}
    adam_step(m, {k: np.full_like(v, 0.37) for k, v in m.params.items()}, AdamState(learning_rate=0.01))
    for k, v in m.params.items():
        np.testing.assert_allclose(before[k] - v, 0.01, rtol=1e-6)


def test_adam_counter_increments():
    m = _tiny_model()
    state = AdamState()
    g = {k: np.ones_like(v) for k, v in m.params.items()}
    for n in range(1, 4):
        adam_step(m, g, state)
        assert state.step == n
        assert all(state.m[k].shape == v.shape for k, v in m.params.items())


def test_adam_shape_mismatch():
    m = _tiny_model()
    g = {k: np.zeros_like(v) for k, v in m.params.items()}
    g["W"] = np.zeros(1)
    with pytest.raises(InputError):
        adam_step(m, g, AdamState())


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), lr=st.floats(1e-4, 1e-1))
def test_adam_step_reduces_convex_quadratic(seed, lr):
    rng = np.random.default_rng(seed)
    m = _tiny_model()
    target = {k: v + rng.normal(size=v.shape) for k, v in m.params.items()}
    objective = lambda: sum(float(((m.params[k] - target[k]) ** 2).sum()) for k in m.params)
    before = objective()
    adam_step(m, {k: 2 * (m.params[k] - target[k]) for k in m.params}, AdamState(learning_rate=lr))
    assert objective() < before


# -- gradient check ---------------------------------------------------------------

@pytest.mark.parametrize("task", [CLASSIFICATION, REGRESSION])
@pytest.mark.parametrize("pooling", ["dense", "mean", "attention"])
def test_gradient_check_small_instance(task, pooling):
    ds = small_dataset(seed=0, task=task)
    m = check_instance(3, k=2, max_len=6, task=task, n_classes=ds.n_classes, pooling=pooling, seed=0)
    assert gradient_check(m, list(ds.samples)) < 1e-4


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradient_check_random_seeds(seed):
    ds = small_dataset(seed=seed)
    m = check_instance(3, k=2, max_len=6, seed=seed)
    assert gradient_check(m, list(ds.samples), seed=seed) < 1e-4


def test_gradient_check_probes_every_group():
    ds = small_dataset()
    m = check_instance(3, k=2, max_len=6)
    _, details = gradient_check(m, list(ds.samples), return_details=True)
    assert len(details) >= 200
    assert {d[0] for d in details} == set(m.params)


def test_alpha_zero_imputation_gradients_exactly_zero():
    ds = small_dataset()
    m = check_instance(3, k=2, max_len=6)
    m.alpha = 0.0
    _, _, _, g = loss_and_grad(m, make_batch(list(ds.samples), m.max_len))
    assert not g["g_w"].any() and not g["g_b"].any()


def test_saturated_embedding_still_passes():
    ds = small_dataset()
    m = check_instance(3, k=2, max_len=6)
    m.params["b"] += 40.0                # sigmoid pinned at 1, embedding gradients vanish
    worst, details = gradient_check(m, list(ds.samples), return_details=True)
    assert worst < 1e-4
    assert max(abs(d[2]) for d in details if d[0] == "W") < 1e-12


def test_gradient_check_epsilon_range():
    m = check_instance(3)
    with pytest.raises(InputError):
        gradient_check(m, list(small_dataset().samples), epsilon=1e-2)


# -- correlation sources ------------------------------------------------------------

def test_resolve_correlation_sources(rng, tmp_path):
    ds = random_dataset(rng, 4, 6, 3, n_classes=2)
    assert (resolve_correlation(ds, TrainConfig(source="ones"))[0] == 1).all()
    np.testing.assert_array_equal(resolve_correlation(ds, TrainConfig(source="diag"))[0], np.eye(3))
    np.testing.assert_array_equal(resolve_correlation(ds, TrainConfig(source="rand", seed=5))[0], rand_matrix(3, 5))
    C = rand_matrix(3, 9)
    write_correlation_csv(C, tmp_path / "c.csv")
    got = resolve_correlation(ds, TrainConfig(source="file", correlation_file=str(tmp_path / "c.csv")))[0]
    np.testing.assert_allclose(got, C, rtol=1e-15)


def test_resolve_correlation_file_shape_mismatch(rng, tmp_path):
    write_correlation_csv(np.eye(2), tmp_path / "c.csv")
    with pytest.raises(InputError):
        resolve_correlation(random_dataset(rng, 2, 4, 3), TrainConfig(source="file", correlation_file=str(tmp_path / "c.csv")))


# -- training -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def separable():
    return make_planted_dataset(200, 3, 8, pairs=((0, 1),), noise=0.1, seed=0)


def test_training_loss_halves(separable):
    _, log = train(separable, TrainConfig(k=2, hidden_size=16, epochs=100, learning_rate=1e-2,
                                          seed=0, track_metrics=False))
    assert log[-1]["loss"] <= 0.5 * log[0]["loss"]


def test_identical_seeds_identical_parameters(separable):
    cfg = TrainConfig(k=2, hidden_size=8, epochs=3, seed=4, track_metrics=False)
    a, _ = train(separable, cfg)
    b, _ = train(separable, cfg)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_diag_gate_survives_training(separable):
    cfg = dict(k=2, hidden_size=8, source="diag", track_metrics=False)
    model, _ = train(separable, TrainConfig(epochs=3, **cfg))
    early, _ = train(separable, TrainConfig(epochs=1, **cfg))
    np.testing.assert_array_equal(model.gate, np.tile(np.repeat(diag_matrix(3), 2, axis=0), (1, 3)))
    off = model.gate == 0
    np.testing.assert_array_equal(model.params["W"][off], early.params["W"][off])
    assert not np.array_equal(model.params["W"][~off], early.params["W"][~off])
    s = separable[0]
    base = embed(s, model)
    vals = s.values.copy()
    vals[:, 2] += 5.0
    moved = embed(TimeSeriesSample(vals, s.mask, s.timestamps), model)
    np.testing.assert_array_equal(moved[:, :4], base[:, :4])


def test_log_rows(separable):
    _, log = train(separable.subset(np.arange(20)), TrainConfig(k=1, hidden_size=4, epochs=2, batch_size=8),
                   eval_dataset=separable.subset(np.arange(20, 30)))
    assert [(r["epoch"], r["split"]) for r in log] == [(1, "train"), (1, "test"), (2, "train"), (2, "test")]
    assert all(set(r) == {"epoch", "split", "loss", "l_pred", "l_imp", "metric"} for r in log)


def test_patience_stops_early(separable):
    _, log = train(separable.subset(np.arange(16)),
                   TrainConfig(k=1, hidden_size=4, epochs=50, learning_rate=0.0, patience=2, track_metrics=False))
    assert len(log) == 3


def test_train_rejects_bad_labels():
    s = TimeSeriesSample(np.zeros((2, 2)), np.ones((2, 2)), [0, 1], label=3)
    with pytest.raises(InputError):
        train(Dataset((s,), n_classes=2), TrainConfig(epochs=1))


def test_train_rejects_task_mismatch(separable):
    with pytest.raises(InputError):
        train(separable, TrainConfig(task=REGRESSION, epochs=1))


def test_regression_training_runs(rng):
    ds = Dataset(tuple(random_sample(rng, 5, 2, label=float(i)) for i in range(12)), task=REGRESSION)
    model, log = train(ds, TrainConfig(task=REGRESSION, k=1, hidden_size=4, epochs=2, batch_size=4))
    assert set(evaluate(model, ds)) == {"mae", "mse"}
    assert np.isfinite(log[-1]["loss"])


def test_cross_validate_shapes(separable):
    res = cross_validate(separable.subset(np.arange(40)),
                         TrainConfig(k=1, hidden_size=4, epochs=1, folds=4, source="ones", track_metrics=False))
    assert len(res["folds"]) == 4
    assert {"accuracy", "auc", "accuracy_std", "auc_std"} == set(res["mean"])
