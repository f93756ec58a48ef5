"""Forward and reverse passes of the individual-feature network.

The network is a fixed graph::

    inputs (x, delta, m) --gated embedding--> e_t --self-attention--> h_t
        --decay repair--> h~_t --aggregation--> v --head--> prediction
                                 h~_t --per-dimension affine--> x_hat

Every stage runs on padded batches of shape ``(B, T, ...)``; positions past a
sample's length are excluded from attention keys, aggregation and losses, so
they receive exactly zero gradient. Gradients are derived by hand and checked
against finite differences in the test-suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASSIFICATION, REGRESSION, TimeSeriesSample, last_observed_index
from .exceptions import InputError, NumericalError

POOLINGS = ("dense", "mean", "attention")
_ATTN_CHUNK = 1 << 22


def expand_correlation(C, k: int) -> np.ndarray:
    """Tile a ``(D, D)`` correlation matrix to the ``(kD, 3D)`` embedding gate.

    Row ``i`` repeats row ``i // k`` of ``C`` across the value, interval and
    mask blocks.
    """
    C = np.asarray(C, dtype=float)
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    return np.tile(np.repeat(C, k, axis=0), (1, 3))


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


@dataclass
class LifeModel:
    """Parameters and hyper-parameters of one network.

    ``W`` is stored densely, but only ``W * gate`` takes part in the forward
    pass, so entries under a zero gate never change during training.
    """

    params: dict
    correlation: np.ndarray
    k: int
    F: int
    alpha: float
    max_len: int
    task: str
    n_classes: int | None = None
    pooling: str = "dense"
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    gate: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.correlation = np.asarray(self.correlation, dtype=float)
        self.gate = expand_correlation(self.correlation, self.k)

    @property
    def n_dims(self) -> int:
        return self.correlation.shape[0]

    @property
    def width(self) -> int:
        return self.k * self.n_dims

    def copy(self) -> "LifeModel":
        return LifeModel({k: v.copy() for k, v in self.params.items()}, self.correlation.copy(),
                         self.k, self.F, self.alpha, self.max_len, self.task, self.n_classes,
                         self.pooling, self.norm_mean, self.norm_std)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def aggregated_size(width: int, F: int, pooling: str) -> int:
    return F * width if pooling == "dense" else width


def init_model(correlation, *, k: int = 6, F: int = 3, alpha: float = 1.0, max_len: int = 64,
               task: str = CLASSIFICATION, n_classes: int | None = 2, hidden_size: int = 64,
               attention_size: int | None = None, pooling: str = "dense",
               random_state=None) -> LifeModel:
    """Fresh model: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and
    decay parameters zero, so the decay starts as a full carry-forward.

    The fan-in of an embedding row is the sum of its gate row rather than
    ``3 * D``, so a sparse gate does not start with a weaker signal than a
    dense one.
    """
    if pooling not in POOLINGS:
        raise InputError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")
    if task == CLASSIFICATION and (n_classes is None or n_classes < 2):
        raise InputError("classification needs n_classes >= 2")
    rng = np.random.default_rng(random_state)
    C = np.asarray(correlation, dtype=float)
    D = C.shape[0]
    n = k * D
    m = attention_size or n
    agg = aggregated_size(n, F, pooling)

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    gate_fan_in = expand_correlation(C, k).sum(axis=1, keepdims=True)
    params = {
        "W": rng.uniform(-1.0, 1.0, size=(n, 3 * D)) / np.sqrt(np.maximum(gate_fan_in, 1.0)),
        "b": np.zeros(n),
        "pe": uniform((max_len, n), max_len),
        "Wa": uniform((m, 2 * n), 2 * n),
        "ba": np.zeros(m),
        "va": uniform(m, m),
        "decay_w": np.zeros(D),
        "decay_a": np.zeros(D),
        "g_w": uniform((D, k), k),
        "g_b": np.zeros(D),
    }
    if pooling == "attention":
        params["pool_u"] = uniform(n, n)
    if task == CLASSIFICATION:
        params["W1"] = uniform((hidden_size, agg), agg)
        params["b1"] = np.zeros(hidden_size)
        params["W2"] = uniform((n_classes, hidden_size), hidden_size)
        params["b2"] = np.zeros(n_classes)
    elif task == REGRESSION:
        params["Wo"] = uniform((1, agg), agg)
        params["bo"] = np.zeros(1)
        n_classes = None
    else:
        raise InputError(f"unknown task {task!r}")
    return LifeModel(params, C, k, F, alpha, max_len, task, n_classes, pooling)


@dataclass
class Batch:
    """Zero-padded arrays for a list of samples."""

    values: np.ndarray      # (B, T, D), missing and padding set to 0
    mask: np.ndarray        # (B, T, D)
    intervals: np.ndarray   # (B, T, D)
    valid: np.ndarray       # (B, T)
    lengths: np.ndarray     # (B,)
    prev: np.ndarray        # (B, T, D) last observed index before t, or -1
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.values.shape[0]


def make_batch(samples, max_len: int | None = None) -> Batch:
    samples = list(samples)
    if not samples:
        raise InputError("empty batch")
    lengths = np.array([s.n_timestamps for s in samples])
    T = int(lengths.max())
    if max_len is not None and T > max_len:
        raise InputError(f"sequence length {T} exceeds the model's max_len={max_len}")
    D = samples[0].n_dims
    B = len(samples)
    X = np.zeros((B, T, D))
    M = np.zeros((B, T, D))
    dl = np.zeros((B, T, D))
    prev = np.full((B, T, D), -1, dtype=np.int64)
    valid = np.zeros((B, T))
    for i, s in enumerate(samples):
        L = s.n_timestamps
        X[i, :L] = s.filled(0.0)
        M[i, :L] = s.mask
        dl[i, :L] = s.intervals
        prev[i, :L] = last_observed_index(s.mask)
        valid[i, :L] = 1.0
    labels = None
    if all(s.label is not None for s in samples):
        labels = np.array([s.label for s in samples])
    return Batch(X, M, dl, valid, lengths, prev, labels)


def dense_weights(lengths, F: int, T: int | None = None) -> np.ndarray:
    """Quadratic proximity weights ``(B, F, T)`` for dense interpolation.

    For a sequence of length L, position t (1-based) sits at ``F*t/L`` and
    contributes ``(1 - |F*t/L - f| / F)**2`` to anchor f.
    """
    lengths = np.asarray(lengths)
    T = int(lengths.max()) if T is None else T
    t = np.arange(1, T + 1, dtype=float)
    f = np.arange(1, F + 1, dtype=float)
    pos = F * t[None, :] / lengths[:, None]                          # (B, T)
    w = (1.0 - np.abs(pos[:, None, :] - f[None, :, None]) / F) ** 2  # (B, F, T)
    return w * (t[None, None, :] <= lengths[:, None, None])


def dense_interpolate(features, F: int) -> np.ndarray:
    """Aggregate a ``(T, n)`` feature sequence into a vector of length ``F*n``
    (anchor-major)."""
    H = np.asarray(features, dtype=float)
    if H.ndim != 2 or H.shape[0] < 1:
        raise InputError("features must be a non-empty (T, n) array")
    w = dense_weights([H.shape[0]], F)[0]
    return (w @ H).reshape(-1)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _inputs(batch: Batch) -> np.ndarray:
    return np.concatenate([batch.values, batch.intervals, batch.mask], axis=-1)


def _embed(model: LifeModel, batch: Batch):
    p = model.params
    T = batch.values.shape[1]
    I = _inputs(batch)
    Wg = p["W"] * model.gate
    Z = I @ Wg.T + p["b"]
    S = sigmoid(Z)
    E = S + p["pe"][:T]
    return I, S, E


def _attention_chunks(B, T, m):
    step = max(1, _ATTN_CHUNK // max(1, T * T * m))
    for start in range(0, B, step):
        yield slice(start, min(B, start + step))


def _attend(model: LifeModel, E, valid):
    p = model.params
    n = E.shape[-1]
    U = E @ p["Wa"][:, :n].T          # key part, (B, T, m)
    Q = E @ p["Wa"][:, n:].T          # query part
    B, T, m = U.shape
    scores = np.empty((B, T, T))
    for sl in _attention_chunks(B, T, m):
        P = np.tanh(U[sl, None, :, :] + Q[sl, :, None, :] + p["ba"])  # (b, t, s, m)
        scores[sl] = P @ p["va"]
    scores = np.where(valid[:, None, :] > 0, scores, -np.inf)
    A = _softmax(scores, axis=-1)
    H = A @ E
    return U, Q, A, H


def _repair(model: LifeModel, H, batch: Batch):
    p = model.params
    B, T, _ = H.shape
    D, k = model.n_dims, model.k
    H4 = H.reshape(B, T, D, k)
    zr = p["decay_w"] * batch.intervals + p["decay_a"]
    gamma = np.exp(-np.maximum(0.0, zr))
    use = (batch.mask == 0) & (batch.prev >= 0)
    coef = np.where(use, gamma, 0.0)
    idx = np.broadcast_to(np.maximum(batch.prev, 0)[..., None], (B, T, D, k))
    prev = np.take_along_axis(H4, idx, axis=1)
    Ht4 = coef[..., None] * prev + (1.0 - coef[..., None]) * H4
    return zr, gamma, use, coef, prev, Ht4


def _aggregate(model: LifeModel, Ht, batch: Batch):
    B, T, n = Ht.shape
    if model.pooling == "dense":
        w = dense_weights(batch.lengths, model.F, T)
        return (w @ Ht).reshape(B, -1), w
    if model.pooling == "mean":
        w = batch.valid / batch.lengths[:, None]
        return np.einsum("bt,btn->bn", w, Ht), w
    s = Ht @ model.params["pool_u"]
    s = np.where(batch.valid > 0, s, -np.inf)
    w = _softmax(s, axis=-1)
    return np.einsum("bt,btn->bn", w, Ht), w


def _head(model: LifeModel, v):
    p = model.params
    if model.task == CLASSIFICATION:
        a1 = np.tanh(v @ p["W1"].T + p["b1"])
        logits = a1 @ p["W2"].T + p["b2"]
        return {"a1": a1, "logits": logits, "output": _softmax(logits, axis=-1)}
    y = (v @ p["Wo"].T + p["bo"])[:, 0]
    return {"output": y}


def forward(model: LifeModel, batch: Batch) -> dict:
    """Run the network; returns all intermediates for the reverse pass."""
    D, k = model.n_dims, model.k
    if batch.values.shape[2] != D:
        raise InputError(f"batch has {batch.values.shape[2]} dimensions, model expects {D}")
    if batch.values.shape[1] > model.max_len:
        raise InputError(f"sequence length {batch.values.shape[1]} exceeds max_len={model.max_len}")
    I, S, E = _embed(model, batch)
    U, Q, A, H = _attend(model, E, batch.valid)
    zr, gamma, use, coef, prev, Ht4 = _repair(model, H, batch)
    B, T = batch.values.shape[:2]
    Ht = Ht4.reshape(B, T, D * k)
    v, agg_w = _aggregate(model, Ht, batch)
    head = _head(model, v)
    x_hat = np.einsum("btdk,dk->btd", Ht4, model.params["g_w"]) + model.params["g_b"]
    return dict(I=I, S=S, E=E, U=U, Q=Q, A=A, H=H, zr=zr, gamma=gamma, use=use, coef=coef,
                prev=prev, Ht4=Ht4, Ht=Ht, v=v, agg_w=agg_w, x_hat=x_hat, **head)


def loss_terms(model: LifeModel, batch: Batch, cache: dict, labels=None):
    """Per-sample prediction and imputation losses, shape ``(B,)`` each."""
    labels = batch.labels if labels is None else labels
    if labels is None:
        raise InputError("losses need labels")
    out = cache["output"]
    B = out.shape[0]
    if model.task == CLASSIFICATION:
        y = np.asarray(labels, dtype=np.int64)
        logits = cache["logits"]
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        l_pred = -logp[np.arange(B), y]
    else:
        l_pred = (out - np.asarray(labels, dtype=float)) ** 2
    count = batch.mask.sum(axis=(1, 2))
    sq = (batch.mask * (batch.values - cache["x_hat"]) ** 2).sum(axis=(1, 2))
    l_imp = np.where(count > 0, sq / np.maximum(count, 1.0), 0.0)
    return l_pred, l_imp


def batch_loss(model: LifeModel, batch: Batch, labels=None):
    """Mean over the batch of ``l_pred + alpha * l_imp``."""
    cache = forward(model, batch)
    l_pred, l_imp = loss_terms(model, batch, cache, labels)
    total = l_pred + model.alpha * l_imp
    bad = np.flatnonzero(~np.isfinite(total))
    if bad.size:
        raise NumericalError(f"non-finite loss for batch members {bad.tolist()}")
    return float(total.mean()), float(l_pred.mean()), float(l_imp.mean()), cache


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(model: LifeModel, batch: Batch, cache: dict, labels=None) -> dict:
    """Exact gradients of the mean batch loss w.r.t. every parameter.

    The decay uses the subgradient 0 for ``max(0, z)`` at ``z == 0``.
    """
    p = model.params
    labels = batch.labels if labels is None else labels
    D, k = model.n_dims, model.k
    B, T = batch.values.shape[:2]
    n = D * k
    grads = {name: np.zeros_like(val) for name, val in p.items()}

    # prediction head
    v = cache["v"]
    if model.task == CLASSIFICATION:
        y = np.asarray(labels, dtype=np.int64)
        dlogits = cache["output"].copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        a1 = cache["a1"]
        grads["W2"] = dlogits.T @ a1
        grads["b2"] = dlogits.sum(axis=0)
        dz1 = (dlogits @ p["W2"]) * (1.0 - a1 ** 2)
        grads["W1"] = dz1.T @ v
        grads["b1"] = dz1.sum(axis=0)
        dv = dz1 @ p["W1"]
    else:
        dy = 2.0 * (cache["output"] - np.asarray(labels, dtype=float)) / B
        grads["Wo"] = dy[None, :] @ v
        grads["bo"] = np.array([dy.sum()])
        dv = dy[:, None] * p["Wo"]

    # imputation head
    Ht4 = cache["Ht4"]
    count = batch.mask.sum(axis=(1, 2))
    scale = np.where(count > 0, model.alpha / (B * np.maximum(count, 1.0)), 0.0)
    dxhat = -2.0 * scale[:, None, None] * batch.mask * (batch.values - cache["x_hat"])
    grads["g_w"] = np.einsum("btd,btdk->dk", dxhat, Ht4)
    grads["g_b"] = dxhat.sum(axis=(0, 1))
    dHt4 = dxhat[..., None] * p["g_w"]

    # aggregation
    Ht = cache["Ht"]
    w = cache["agg_w"]
    if model.pooling == "dense":
        dHt = np.transpose(w, (0, 2, 1)) @ dv.reshape(B, model.F, n)
    elif model.pooling == "mean":
        dHt = w[..., None] * dv[:, None, :]
    else:
        dHt = w[..., None] * dv[:, None, :]
        dw = Ht @ dv[..., None]
        dw = dw[..., 0]
        ds = w * (dw - (w * dw).sum(axis=1, keepdims=True))
        grads["pool_u"] = np.einsum("bt,btn->n", ds, Ht)
        dHt = dHt + ds[..., None] * p["pool_u"]
    dHt4 = dHt4 + dHt.reshape(B, T, D, k)

    # decay repair
    coef = cache["coef"]
    H4 = cache["H"].reshape(B, T, D, k)
    dH4 = (1.0 - coef[..., None]) * dHt4
    dprev = coef[..., None] * dHt4
    rows = (np.arange(B)[:, None, None] * T + np.maximum(batch.prev, 0)) * D + np.arange(D)
    flat = dH4.reshape(B * T * D, k)
    np.add.at(flat, rows.reshape(-1), dprev.reshape(-1, k))
    dcoef = ((cache["prev"] - H4) * dHt4).sum(axis=-1)
    dgamma = np.where(cache["use"], dcoef, 0.0)
    dzr = -cache["gamma"] * dgamma * (cache["zr"] > 0)
    grads["decay_w"] = (dzr * batch.intervals).sum(axis=(0, 1))
    grads["decay_a"] = dzr.sum(axis=(0, 1))
    dH = flat.reshape(B, T, n)

    # self-attention
    E, A, U, Q = cache["E"], cache["A"], cache["U"], cache["Q"]
    dE = np.transpose(A, (0, 2, 1)) @ dH
    dA = dH @ np.transpose(E, (0, 2, 1))
    dS = A * (dA - (A * dA).sum(axis=-1, keepdims=True))
    m = U.shape[-1]
    dU = np.zeros_like(U)
    dQ = np.zeros_like(Q)
    for sl in _attention_chunks(B, T, m):
        P = np.tanh(U[sl, None, :, :] + Q[sl, :, None, :] + p["ba"])
        grads["va"] += np.einsum("btsm,bts->m", P, dS[sl])
        dpre = dS[sl][..., None] * p["va"] * (1.0 - P ** 2)
        grads["ba"] += dpre.sum(axis=(0, 1, 2))
        dU[sl] = dpre.sum(axis=1)
        dQ[sl] = dpre.sum(axis=2)
    grads["Wa"][:, :n] = np.einsum("btm,btn->mn", dU, E)
    grads["Wa"][:, n:] = np.einsum("btm,btn->mn", dQ, E)
    dE = dE + dU @ p["Wa"][:, :n] + dQ @ p["Wa"][:, n:]
    dE = dE * batch.valid[..., None]

    # gated embedding
    S = cache["S"]
    dZ = dE * S * (1.0 - S)
    grads["W"] = np.einsum("btn,bti->ni", dZ, cache["I"]) * model.gate
    grads["b"] = dZ.sum(axis=(0, 1))
    grads["pe"][:T] = dE.sum(axis=0)
    return grads


def loss_and_grad(model: LifeModel, batch: Batch, labels=None):
    loss, l_pred, l_imp, cache = batch_loss(model, batch, labels)
    return loss, l_pred, l_imp, backward(model, batch, cache, labels)


# ---------------------------------------------------------------------------
# single-sample views
# ---------------------------------------------------------------------------

def _one(sample: TimeSeriesSample, model: LifeModel) -> Batch:
    return make_batch([sample], model.max_len)


def embed(sample: TimeSeriesSample, model: LifeModel) -> np.ndarray:
    """Embedding sequence ``e_t`` of shape ``(T, kD)``."""
    return _embed(model, _one(sample, model))[2][0]


def self_attention(E, model: LifeModel, return_weights: bool = False):
    """Attend over a ``(T, kD)`` sequence using each step as the query."""
    E = np.asarray(E, dtype=float)[None]
    _, _, A, H = _attend(model, E, np.ones(E.shape[:2]))
    return (H[0], A[0]) if return_weights else H[0]


def decay_repair(H, sample: TimeSeriesSample, model: LifeModel) -> np.ndarray:
    batch = _one(sample, model)
    return _repair(model, np.asarray(H, dtype=float)[None], batch)[-1][0].reshape(H.shape)


def predict_from_vector(v, model: LifeModel):
    """Head output for aggregated vectors: class probabilities or a scalar."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    out = _head(model, v)["output"]
    return out[0] if out.shape[0] == 1 else out


def impute(Ht, model: LifeModel) -> np.ndarray:
    """Per-dimension affine read-out of repaired features, ``(T, D)``."""
    Ht = np.asarray(Ht, dtype=float)
    Ht4 = Ht.reshape(Ht.shape[0], model.n_dims, model.k)
    return np.einsum("tdk,dk->td", Ht4, model.params["g_w"]) + model.params["g_b"]


def joint_loss(prediction, label, x_hat, sample: TimeSeriesSample, alpha: float, task: str) -> float:
    """``l_pred + alpha * l_imp`` for a single sample."""
    if alpha < 0:
        raise InputError(f"alpha must be non-negative, got {alpha}")
    if task == CLASSIFICATION:
        l_pred = -float(np.log(np.asarray(prediction)[int(label)]))
    else:
        l_pred = float((float(prediction) - float(label)) ** 2)
    count = sample.mask.sum()
    if count == 0:
        l_imp = 0.0
    else:
        resid = np.where(sample.mask == 1, sample.filled(0.0) - np.asarray(x_hat), 0.0)
        l_imp = float((resid ** 2).sum() / count)
    return l_pred + alpha * l_imp


def predict_batch(model: LifeModel, samples, batch_size: int = 256) -> np.ndarray:
    samples = list(samples)
    outs = []
    for start in range(0, len(samples), batch_size):
        batch = make_batch(samples[start:start + batch_size], model.max_len)
        outs.append(forward(model, batch)["output"])
    return np.concatenate(outs, axis=0)
