"""File formats: JSON-lines datasets, long-format CSV ingestion, correlation
CSVs and JSON model checkpoints."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset, TimeSeriesSample
from .exceptions import InputError
from .model import LifeModel

CHECKPOINT_VERSION = 1


def _sample_record(sample: TimeSeriesSample, sample_id) -> dict:
    values = [[None if m == 0 else float(v) for v, m in zip(row, mrow)]
              for row, mrow in zip(sample.values, sample.mask)]
    rec = {"id": sample_id, "timestamps": sample.timestamps.tolist(), "values": values}
    if sample.label is not None:
        rec["label"] = sample.label.item() if hasattr(sample.label, "item") else sample.label
    return rec


def write_dataset(dataset: Dataset, path, ids=None) -> None:
    """One JSON object per line; the first line is a header with the task.

    Missing cells are written as ``null``.
    """
    path = Path(path)
    ids = ids if ids is not None else range(len(dataset))
    with path.open("w") as fh:
        header = {"task": dataset.task, "n_classes": dataset.n_classes, "n_dims": dataset.n_dims}
        fh.write(json.dumps({"header": header}) + "\n")
        for sid, s in zip(ids, dataset):
            fh.write(json.dumps(_sample_record(s, sid)) + "\n")


def read_dataset(path, n_dims: int | None = None) -> Dataset:
    """Inverse of :func:`write_dataset`; a missing header means classification."""
    path = Path(path)
    task, n_classes = CLASSIFICATION, None
    samples = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "header" in rec:
                head = rec["header"]
                task = head.get("task", CLASSIFICATION)
                n_classes = head.get("n_classes")
                n_dims = n_dims or head.get("n_dims")
                continue
            try:
                values = np.array([[np.nan if v is None else v for v in row] for row in rec["values"]],
                                  dtype=float)
                if values.size == 0 and n_dims:
                    values = values.reshape(0, n_dims)
                samples.append(TimeSeriesSample.from_array(values, rec.get("timestamps"), rec.get("label")))
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: malformed sample ({exc})") from None
    if task == REGRESSION:
        n_classes = None
    return Dataset(tuple(samples), task=task, n_classes=n_classes)


def convert_long_csv(csv_path, bucket_width: float | None = None,
                     labels: dict | None = None, task: str = CLASSIFICATION) -> tuple[Dataset, list]:
    """Build a dataset from rows ``sample_id, t, dim, value``.

    Dimensions are the sorted distinct ``dim`` names and the time axis of each
    sample is its sorted distinct times. With ``bucket_width`` each time is
    mapped to ``floor(t / width) * width`` and observations sharing a bucket
    and dimension are averaged. An optional ``label`` column, or the ``labels``
    mapping, attaches a per-sample label.

    Returns the dataset and the list of sample ids in order.
    """
    if bucket_width is not None and not bucket_width > 0:
        raise InputError("bucket width must be positive")
    cells = defaultdict(lambda: defaultdict(list))  # sid -> (t, dim) -> [values]
    found_labels = {}
    dims = set()
    with Path(csv_path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, 1):
            if not row or all(not c.strip() for c in row):
                continue
            if header is None and row[0].strip().lower() == "sample_id":
                header = [c.strip().lower() for c in row]
                continue
            if len(row) not in (4, 5):
                raise InputError(f"line {lineno}: expected 4 or 5 fields, got {len(row)}")
            sid, t, dim, value = (c.strip() for c in row[:4])
            try:
                t = float(t)
                value = float(value)
            except ValueError:
                raise InputError(f"line {lineno}: time and value must be numeric") from None
            if not (math.isfinite(t) and math.isfinite(value)):
                raise InputError(f"line {lineno}: non-finite time or value")
            if bucket_width is not None:
                t = math.floor(t / bucket_width) * bucket_width
            if len(row) == 5 and row[4].strip():
                found_labels[sid] = row[4].strip()
            cells[sid][(t, dim)].append(value)
            dims.add(dim)
    dim_names = sorted(dims)
    col = {d: i for i, d in enumerate(dim_names)}
    labels = dict(labels or {})
    for sid, raw in found_labels.items():
        labels.setdefault(sid, int(float(raw)) if task == CLASSIFICATION else float(raw))
    samples, ids = [], []
    for sid in cells:
        times = sorted({t for t, _ in cells[sid]})
        row_of = {t: i for i, t in enumerate(times)}
        values = np.full((len(times), len(dim_names)), np.nan)
        for (t, dim), obs in cells[sid].items():
            values[row_of[t], col[dim]] = float(np.mean(obs))
        samples.append(TimeSeriesSample.from_array(values, np.array(times), labels.get(sid)))
        ids.append(sid)
    return Dataset(tuple(samples), task=task), ids


def write_correlation_csv(matrix, path) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=float), delimiter=",", fmt="%.17g")


def read_correlation_csv(path) -> np.ndarray:
    try:
        C = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputError(f"unreadable correlation file {path}: {exc}") from None
    return C


def save_checkpoint(model: LifeModel, path, extra: dict | None = None) -> None:
    """JSON checkpoint holding hyper-parameters, the gate source matrix and
    every parameter array."""
    state = {
        "version": CHECKPOINT_VERSION,
        "config": {
            "k": model.k, "F": model.F, "alpha": model.alpha, "max_len": model.max_len,
            "task": model.task, "n_classes": model.n_classes, "pooling": model.pooling,
        },
        "correlation": np.asarray(model.correlation).tolist(),
        "norm_mean": None if model.norm_mean is None else np.asarray(model.norm_mean).tolist(),
        "norm_std": None if model.norm_std is None else np.asarray(model.norm_std).tolist(),
        "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in model.params.items()},
    }
    if extra:
        state["extra"] = extra
    Path(path).write_text(json.dumps(state))


def load_checkpoint(path) -> LifeModel:
    try:
        state = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from None
    if state.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {state.get('version')!r}")
    params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in state["params"].items()}
    cfg = state["config"]
    model = LifeModel(params=params, correlation=np.array(state["correlation"], dtype=float), **cfg)
    if state.get("norm_mean") is not None:
        model.norm_mean = np.array(state["norm_mean"], dtype=float)
        model.norm_std = np.array(state["norm_std"], dtype=float)
    return model
