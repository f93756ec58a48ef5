"""Optimisation, gradient verification and evaluation for the network."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cme import DistanceSpec, cme_pipeline, diag_matrix, ones_matrix, pearson_cme, rand_matrix
from .data import CLASSIFICATION, Dataset, apply_normalization, normalization_stats
from .exceptions import InputError
from .metrics import accuracy, kfold_split, mean_absolute_error, roc_auc
from .model import LifeModel, backward, batch_loss, dense_weights, init_model, make_batch, predict_batch

logger = logging.getLogger(__name__)

SOURCES = ("pdtw", "pot", "pearson", "dtw_impute", "dtw_drop", "ones", "rand", "diag", "file")


@dataclass
class TrainConfig:
    k: int = 6
    F: int = 3
    alpha: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    folds: int = 5
    seed: int = 0
    source: str = "pdtw"
    p: float = 0.5
    beta: float = 1.0
    epsilon: float = 0.01
    task: str = CLASSIFICATION
    hidden_size: int = 64
    pooling: str = "dense"
    max_len: int | None = None
    normalize: bool = True
    correlation_file: str | None = None
    lr_decay: float = 1.0
    patience: int | None = None
    track_metrics: bool = True

    def __post_init__(self):
        if self.k < 1 or self.F < 1:
            raise InputError("k and F must be positive")
        if self.alpha < 0:
            raise InputError("alpha must be non-negative")
        if self.folds < 2:
            raise InputError("cross-validation needs folds >= 2")
        if self.source not in SOURCES:
            raise InputError(f"unknown correlation source {self.source!r}; expected one of {SOURCES}")
        if self.source == "file" and not self.correlation_file:
            raise InputError("source 'file' needs correlation_file")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(model: LifeModel, grads: dict, state: AdamState):
    """One bias-corrected Adam update, applied to ``model.params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, param in model.params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise InputError(f"gradient shape {g.shape} != parameter shape {param.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        param -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


def gradient_check(model: LifeModel, samples, epsilon: float = 1e-5, n_params: int = 200,
                   seed: int | None = 0, return_details: bool = False):
    """Max relative error between analytic and central-difference gradients.

    At least ``n_params`` scalar parameters are probed, spread over every
    parameter group; relative error is ``|a - f| / max(1e-8, |a| + |f|)``.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise InputError("epsilon must lie in [1e-6, 1e-3]")
    batch = make_batch(samples if isinstance(samples, (list, tuple)) else [samples], model.max_len)
    _, _, _, cache = batch_loss(model, batch)
    grads = backward(model, batch, cache)
    rng = np.random.default_rng(seed)
    names = list(model.params)
    sizes = {name: model.params[name].size for name in names}
    # an even share per group, then the shortfall of small groups goes to
    # groups that still have unprobed entries
    per_group = max(1, math.ceil(n_params / len(names)))
    counts = {name: min(sizes[name], per_group) for name in names}
    short = min(n_params, sum(sizes.values())) - sum(counts.values())
    while short > 0:
        for name in names:
            if short > 0 and counts[name] < sizes[name]:
                counts[name] += 1
                short -= 1
    worst = 0.0
    details = []
    for name in names:
        param = model.params[name]
        flat = param.reshape(-1)
        picks = rng.choice(flat.size, size=counts[name], replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + epsilon
            up = batch_loss(model, batch)[0]
            flat[i] = old - epsilon
            down = batch_loss(model, batch)[0]
            flat[i] = old
            fd = (up - down) / (2 * epsilon)
            ad = grads[name].reshape(-1)[i]
            err = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            details.append((name, int(i), float(ad), float(fd), float(err)))
            worst = max(worst, err)
    return (worst, details) if return_details else worst


def check_instance(n_dims: int, *, k: int = 2, F: int = 3, max_len: int = 6,
                   task: str = CLASSIFICATION, n_classes: int | None = 2, hidden_size: int = 16,
                   pooling: str = "dense", scorer_scale: float = 4.0, seed: int | None = 0) -> LifeModel:
    """A randomised model for gradient checks.

    Zero-initialised groups (biases, decay) get N(0, 0.5) values so every
    branch is active; the attention scorers are scaled by ``scorer_scale`` so
    attention is far from uniform. With near-uniform attention all steps carry
    almost the same feature, and gradients of the pooling scorer shrink below
    what a central difference can resolve. Dense interpolation sums roughly
    ``T / F`` steps per anchor, so the head's input weights are divided by the
    largest anchor mass to keep the hidden layer out of saturation on long
    series. The correlation matrix is random with unit diagonal.
    """
    rng = np.random.default_rng(seed)
    C = rng.random((n_dims, n_dims))
    C = np.triu(C, 1) + np.triu(C, 1).T + np.eye(n_dims)
    model = init_model(C, k=k, F=F, max_len=max_len, task=task, n_classes=n_classes,
                       hidden_size=hidden_size, pooling=pooling, random_state=rng)
    for name, value in model.params.items():
        if not value.any():
            value += rng.normal(scale=0.5, size=value.shape)
    for name in ("Wa", "va", "pool_u"):
        if name in model.params:
            model.params[name] *= scorer_scale
    if pooling == "dense":
        mass = dense_weights([max_len], F)[0].sum(axis=1).max()
        for name in ("W1", "Wo"):
            if name in model.params:
                model.params[name] /= max(mass, 1.0)
    return model


def resolve_correlation(dataset: Dataset, config: TrainConfig) -> tuple[np.ndarray, list]:
    """Correlation matrix requested by ``config.source`` plus diagnostics."""
    D = dataset.n_dims
    src = config.source
    if src == "ones":
        return ones_matrix(D), []
    if src == "diag":
        return diag_matrix(D), []
    if src == "rand":
        return rand_matrix(D, config.seed), []
    if src == "file":
        from .io import read_correlation_csv

        C = read_correlation_csv(config.correlation_file)
        if C.shape != (D, D):
            raise InputError(f"correlation file is {C.shape}, dataset has D={D}")
        return C, []
    if src == "pearson":
        res = pearson_cme(dataset)
    else:
        res = cme_pipeline(dataset, DistanceSpec(src, p=config.p, beta=config.beta, epsilon=config.epsilon))
    return res.correlation, res.diagnostics


def _check_labels(dataset: Dataset, config: TrainConfig):
    y = dataset.labels
    if config.task == CLASSIFICATION:
        if dataset.n_classes is None or y.min() < 0 or y.max() >= dataset.n_classes:
            raise InputError("labels must be integers in [0, n_classes)")
        if dataset.n_classes < 2:
            raise InputError("classification needs at least two classes")
    elif not np.isfinite(y).all():
        raise InputError("regression targets must be finite")
    return y


def evaluate(model: LifeModel, dataset: Dataset) -> dict:
    """AUC (binary), accuracy (classification) or MAE/MSE (regression)."""
    y = dataset.labels
    out = predict_batch(model, dataset.samples)
    if model.task == CLASSIFICATION:
        metrics = {"accuracy": accuracy(y, out)}
        if model.n_classes == 2:
            metrics["auc"] = roc_auc(y, out[:, 1])
        return metrics
    return {"mae": mean_absolute_error(y, out), "mse": float(((y - out) ** 2).mean())}


def _primary_metric(metrics: dict) -> float:
    for key in ("auc", "accuracy", "mae"):
        if key in metrics:
            return metrics[key]
    return float("nan")


def train(dataset: Dataset, config: TrainConfig | None = None, correlation=None,
          eval_dataset: Dataset | None = None):
    """Fit a network on ``dataset``.

    Returns ``(model, log)`` where ``log`` holds one row per epoch and split with
    the mean loss, its two parts and the task's primary metric.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    if dataset.task != config.task:
        raise InputError(f"dataset task {dataset.task!r} does not match config task {config.task!r}")
    _check_labels(dataset, config)
    mean = std = None
    if config.normalize:
        mean, std = normalization_stats(dataset)
        dataset = apply_normalization(dataset, mean, std)
        if eval_dataset is not None:
            eval_dataset = apply_normalization(eval_dataset, mean, std)
    if correlation is None:
        correlation, diagnostics = resolve_correlation(dataset, config)
        for item in diagnostics:
            logger.warning("correlation diagnostic: %s", item)
    rng = np.random.default_rng(config.seed)
    max_len = config.max_len or dataset.max_len
    if eval_dataset is not None:
        max_len = max(max_len, eval_dataset.max_len)
    model = init_model(correlation, k=config.k, F=config.F, alpha=config.alpha, max_len=max_len,
                       task=config.task, n_classes=dataset.n_classes, hidden_size=config.hidden_size,
                       pooling=config.pooling, random_state=rng)
    model.norm_mean, model.norm_std = mean, std
    state = AdamState(learning_rate=config.learning_rate)
    y = dataset.labels
    samples = dataset.samples
    N = len(samples)
    log = []
    best, stale = np.inf, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(N)
        totals = np.zeros(3)
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = make_batch([samples[i] for i in idx], model.max_len)
            loss, l_pred, l_imp, cache = batch_loss(model, batch, y[idx])
            grads = backward(model, batch, cache, y[idx])
            adam_step(model, grads, state)
            totals += len(idx) * np.array([loss, l_pred, l_imp])
        totals /= N
        row = {"epoch": epoch, "split": "train", "loss": totals[0], "l_pred": totals[1],
               "l_imp": totals[2], "metric": float("nan")}
        if config.track_metrics:
            row["metric"] = _primary_metric(evaluate(model, dataset))
        log.append(row)
        if eval_dataset is not None and config.track_metrics:
            ev = make_batch(eval_dataset.samples, model.max_len)
            loss, l_pred, l_imp, _ = batch_loss(model, ev, eval_dataset.labels)
            log.append({"epoch": epoch, "split": "test", "loss": loss, "l_pred": l_pred,
                        "l_imp": l_imp, "metric": _primary_metric(evaluate(model, eval_dataset))})
        state.learning_rate *= config.lr_decay
        if config.patience is not None:
            if totals[0] < best - 1e-12:
                best, stale = totals[0], 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info("early stop at epoch %d", epoch)
                    break
    return model, log


def prepare_for_model(model: LifeModel, dataset: Dataset) -> Dataset:
    """Apply the model's stored normalisation, if any."""
    if model.norm_mean is None:
        return dataset
    return apply_normalization(dataset, model.norm_mean, model.norm_std)


def cross_validate(dataset: Dataset, config: TrainConfig | None = None, correlation=None) -> dict:
    """k-fold estimate of the task metrics; the correlation matrix is extracted
    from each training fold unless one is supplied."""
    config = config or TrainConfig()
    y = dataset.labels
    splits = kfold_split(y, config.folds, config.seed, stratify=config.task == CLASSIFICATION)
    per_fold = []
    for train_idx, test_idx in splits:
        model, _ = train(dataset.subset(train_idx), config, correlation)
        per_fold.append(evaluate(model, prepare_for_model(model, dataset.subset(test_idx))))
    keys = per_fold[0].keys()
    summary = {k: float(np.mean([m[k] for m in per_fold])) for k in keys}
    summary.update({f"{k}_std": float(np.std([m[k] for m in per_fold])) for k in keys})
    return {"folds": per_fold, "mean": summary}
