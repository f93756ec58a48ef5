"""Command-line interface.

Every command writes ``<output>.manifest.json`` next to its main output with
the command, its resolved arguments and the package version, so a run can be
repeated exactly. Diagnostics go to standard error as JSON lines. Exit codes:
0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cme import DistanceSpec, check_correlation_matrix, cme_sweep, pearson_cme
from .data import CLASSIFICATION, REGRESSION, average_missing_rate, inject_damaged_sensors, missing_counts
from .exceptions import InputError, NumericalError
from .io import (convert_long_csv, load_checkpoint, read_dataset, save_checkpoint,
                 write_correlation_csv, write_dataset)
from .synthetic import SYNTH_PRESETS, make_synthetic
from .training import TrainConfig, check_instance, cross_validate, evaluate, gradient_check, prepare_for_model, train

logger = logging.getLogger("lifemts")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(), "logger": record.name,
                           "message": record.getMessage()})


def _setup_logging(verbose: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("lifemts")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _diagnostic(**payload):
    sys.stderr.write(json.dumps(payload) + "\n")


def _write_manifest(output, command: str, args: dict, extra: dict | None = None):
    manifest = {"command": command, "version": __version__, "arguments": args}
    if extra:
        manifest.update(extra)
    Path(f"{output}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _plain_args(ns) -> dict:
    return {k: v for k, v in vars(ns).items() if k not in ("func", "config")}


# -- config handling ---------------------------------------------------------

_BOOL_FIELDS = {"normalize", "track_metrics"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional(cast):
    def parse(text):
        return None if text.strip().lower() in ("none", "null", "") else cast(text)
    return parse


def _add_config_flags(parser: argparse.ArgumentParser):
    """One flag per TrainConfig field, named after the field; all default to None
    so only explicitly given flags override the config file."""
    group = parser.add_argument_group("training configuration")
    casts = {int: int, float: float, str: str, bool: _parse_bool}
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        default = f.default
        if f.name in _BOOL_FIELDS:
            cast = _parse_bool
        elif f.name in ("max_len", "patience"):
            cast = _optional(int)
        elif f.name == "correlation_file":
            cast = _optional(str)
        else:
            cast = casts.get(type(default), str)
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        group.add_argument(*names, dest=f"cfg_{f.name}", type=cast, default=None,
                           help=f"default: {default}")


def load_config_file(path) -> dict:
    """Read a flat ``key: value`` YAML mapping."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise InputError("config file must be a flat key-value mapping")
    return data


def resolve_config(ns) -> TrainConfig:
    values = load_config_file(ns.config) if ns.config else {}
    for f in fields(TrainConfig):
        flag = getattr(ns, f"cfg_{f.name}", None)
        if flag is not None:
            values[f.name] = flag
    if ns.seed is not None:
        values["seed"] = ns.seed
    return TrainConfig.from_dict(values)


# -- commands ----------------------------------------------------------------

def cmd_convert(ns) -> int:
    labels = None
    if ns.labels:
        labels = {}
        with open(ns.labels, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].strip().lower() == "sample_id":
                    continue
                if len(row) != 2:
                    raise InputError(f"{ns.labels}:{lineno}: expected sample_id,label")
                raw = row[1].strip()
                labels[row[0].strip()] = int(float(raw)) if ns.task == CLASSIFICATION else float(raw)
    dataset, ids = convert_long_csv(ns.csv, ns.bucket_width, labels, ns.task)
    write_dataset(dataset, ns.out, ids)
    _write_manifest(ns.out, "convert", _plain_args(ns), {"n_samples": len(dataset), "n_dims": dataset.n_dims})
    print(json.dumps({"samples": len(dataset), "dims": dataset.n_dims}))
    return EXIT_OK


def cmd_inject(ns) -> int:
    dataset = read_dataset(ns.dataset)
    D = dataset.n_dims
    if not 0 <= ns.n_damaged <= D:
        raise InputError(f"n_damaged must lie in [0, {D}], got {ns.n_damaged}")
    rng = np.random.default_rng(ns.seed)
    damaged = sorted(int(d) for d in rng.choice(D, size=ns.n_damaged, replace=False))
    before = average_missing_rate(dataset)
    counts_before = missing_counts(dataset)
    out = inject_damaged_sensors(dataset, damaged, ns.rate, int(rng.integers(2**31)))
    report = {"damaged": damaged, "rate": ns.rate, "amr_before": before, "amr_after": average_missing_rate(out)}
    if (missing_counts(out) < counts_before).any():
        raise NumericalError("injection reduced a missing count")
    write_dataset(out, ns.out)
    Path(f"{ns.out}.report.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(ns.out, "inject", _plain_args(ns))
    print(json.dumps(report))
    return EXIT_OK


def _sweep_paths(out: str, penalties) -> list:
    if len(penalties) == 1:
        return [Path(out)]
    base = Path(out)
    return [base.with_name(f"{base.stem}_p{p:g}{base.suffix or '.csv'}") for p in penalties]


def cmd_cme(ns) -> int:
    dataset = read_dataset(ns.dataset)
    if ns.normalize:
        from .data import zscore_normalize

        dataset = zscore_normalize(dataset)
    penalties = ns.p if ns.p else [0.5]
    if ns.method == "pearson":
        results = {None: pearson_cme(dataset)}
        paths = [Path(ns.out)]
    else:
        measure = DistanceSpec(ns.method, p=penalties[0], beta=ns.beta, epsilon=ns.epsilon,
                            max_iter=ns.max_iter, tol=ns.tol)
        results = cme_sweep(dataset, measure, penalties)
        paths = _sweep_paths(ns.out, penalties)
    report = {}
    for path, (p, res) in zip(paths, results.items()):
        C = check_correlation_matrix(res.correlation)
        write_correlation_csv(C, path)
        report[str(path)] = {"p": p, "diagnostics": res.diagnostics}
        for item in res.diagnostics:
            _diagnostic(level="warning", path=str(path), **item)
    Path(f"{ns.out}.diagnostics.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_manifest(ns.out, "cme", _plain_args(ns), {"outputs": [str(p) for p in paths]})
    print(json.dumps({"outputs": [str(p) for p in paths]}))
    return EXIT_OK


def _write_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "L_pred", "L_imp", "metric"])
        for r in rows:
            writer.writerow([r["epoch"], r["split"], repr(float(r["loss"])), repr(float(r["l_pred"])),
                             repr(float(r["l_imp"])), repr(float(r["metric"]))])


def cmd_train(ns) -> int:
    config = resolve_config(ns)
    dataset = read_dataset(ns.dataset)
    eval_ds = read_dataset(ns.eval_dataset) if ns.eval_dataset else None
    manifest_extra = {"config": config.to_dict()}
    if ns.cv:
        summary = cross_validate(dataset, config)
        Path(ns.out).write_text(json.dumps(summary, indent=2) + "\n")
        _write_manifest(ns.out, "train", _plain_args(ns), manifest_extra)
        print(json.dumps(summary["mean"]))
        return EXIT_OK
    model, log = train(dataset, config, eval_dataset=eval_ds)
    save_checkpoint(model, ns.out, extra={"config": config.to_dict()})
    _write_log(log, ns.log or f"{ns.out}.log.csv")
    _write_manifest(ns.out, "train", _plain_args(ns), manifest_extra)
    print(json.dumps({"final_loss": float(log[-1]["loss"]) if log else None, "epochs": config.epochs}))
    return EXIT_OK


def cmd_eval(ns) -> int:
    model = load_checkpoint(ns.model)
    dataset = read_dataset(ns.dataset)
    if dataset.n_dims != model.n_dims:
        raise InputError(f"checkpoint expects {model.n_dims} dimensions, dataset has {dataset.n_dims}")
    if dataset.task != model.task:
        raise InputError(f"checkpoint task {model.task!r} does not match dataset task {dataset.task!r}")
    metrics = evaluate(model, prepare_for_model(model, dataset))
    if ns.out:
        Path(ns.out).write_text(json.dumps(metrics, indent=2) + "\n")
        _write_manifest(ns.out, "eval", _plain_args(ns))
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_gradcheck(ns) -> int:
    config = resolve_config(ns)
    if ns.dataset:
        dataset = read_dataset(ns.dataset)
    else:
        dataset = make_synthetic("small", task=config.task, seed=config.seed)
    samples = list(dataset.samples[: ns.n_samples])
    if any(s.label is None for s in samples):
        raise InputError("the gradient check needs labelled samples")
    if ns.cfg_k is None:
        config = replace(config, k=2)
    model = check_instance(dataset.n_dims, k=config.k, F=config.F, max_len=max(s.n_timestamps for s in samples),
                           task=config.task, n_classes=dataset.n_classes, hidden_size=config.hidden_size,
                           pooling=config.pooling, seed=config.seed)
    model.alpha = config.alpha
    worst = gradient_check(model, samples, epsilon=ns.fd_epsilon, n_params=ns.n_params, seed=config.seed)
    worst = float(worst)
    result = {"max_relative_error": worst, "threshold": ns.threshold, "passed": bool(worst < ns.threshold)}
    print(json.dumps(result))
    if ns.out:
        Path(ns.out).write_text(json.dumps(result, indent=2) + "\n")
        _write_manifest(ns.out, "gradcheck", _plain_args(ns), {"config": config.to_dict()})
    if not worst < ns.threshold:
        _diagnostic(level="error", message="gradient check failed", **result)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_synth(ns) -> int:
    overrides = {k: v for k, v in (("n_samples", ns.n_samples), ("n_dims", ns.n_dims),
                                   ("length", ns.length)) if v is not None}
    dataset = make_synthetic(ns.preset, task=ns.task, seed=ns.seed, **overrides)
    write_dataset(dataset, ns.out)
    _write_manifest(ns.out, "synth", _plain_args(ns),
                    {"n_samples": len(dataset), "amr": average_missing_rate(dataset)})
    print(json.dumps({"samples": len(dataset), "dims": dataset.n_dims,
                      "amr": average_missing_rate(dataset)}))
    return EXIT_OK


def cmd_rerun(ns) -> int:
    """Repeat the run recorded in a manifest, optionally writing elsewhere."""
    try:
        manifest = json.loads(Path(ns.manifest).read_text())
        args = dict(manifest["arguments"])
        command = manifest["command"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read manifest {ns.manifest}: {exc}") from None
    if command not in COMMANDS or command == "rerun":
        raise InputError(f"manifest names an unknown command {command!r}")
    # the resolved config replaces any config file the original run read
    for key, value in manifest.get("config", {}).items():
        args[f"cfg_{key}"] = value
    if "config" in manifest:
        args["seed"] = manifest["config"]["seed"]
    args["config"] = None
    if ns.out is not None:
        args["out"] = ns.out
    replay = argparse.Namespace(**args)
    replay.func = COMMANDS[command]
    return replay.func(replay)


COMMANDS = {"convert": cmd_convert, "inject": cmd_inject, "cme": cmd_cme, "train": cmd_train,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck, "synth": cmd_synth, "rerun": cmd_rerun}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lifemts", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed (default 0)")
    parser.add_argument("--config", default=None, help="YAML key-value file with TrainConfig fields")
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="long-format CSV to a JSON-lines dataset")
    p.add_argument("csv")
    p.add_argument("out")
    p.add_argument("--bucket-width", "--bucket_width", type=float, default=None)
    p.add_argument("--labels", default=None, help="CSV of sample_id,label")
    p.add_argument("--task", choices=(CLASSIFICATION, REGRESSION), default=CLASSIFICATION)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("inject", help="simulate damaged sensors")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--n-damaged", "--n_damaged", type=int, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("cme", help="extract a correlation matrix")
    p.add_argument("dataset")
    p.add_argument("out", help="CSV path; with several --p values one file per value")
    p.add_argument("--method", choices=("pdtw", "pot", "pearson", "dtw_impute", "dtw_drop"), default="pdtw")
    p.add_argument("--p", type=float, nargs="+", default=None)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--max-iter", "--max_iter", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--normalize", type=_parse_bool, default=True)
    p.set_defaults(func=cmd_cme)

    p = sub.add_parser("train", help="train a network (or cross-validate with --cv)")
    p.add_argument("dataset")
    p.add_argument("out", help="checkpoint path, or metrics JSON with --cv")
    p.add_argument("--eval-dataset", "--eval_dataset", default=None)
    p.add_argument("--log", default=None, help="training log CSV (default <out>.log.csv)")
    p.add_argument("--cv", action="store_true", help="k-fold cross-validation instead of a single fit")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic and numerical gradients (k defaults to 2)")
    p.add_argument("--dataset", default=None)
    p.add_argument("--n-samples", "--n_samples", type=int, default=3)
    p.add_argument("--fd-epsilon", "--fd_epsilon", type=float, default=1e-5,
                   help="finite-difference step")
    p.add_argument("--n-params", "--n_params", type=int, default=200)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a planted-correlation benchmark dataset")
    p.add_argument("out")
    p.add_argument("--preset", choices=sorted(SYNTH_PRESETS), default="cme")
    p.add_argument("--task", choices=(CLASSIFICATION, REGRESSION), default=CLASSIFICATION)
    p.add_argument("--n-samples", "--n_samples", type=int, default=None)
    p.add_argument("--n-dims", "--n_dims", type=int, default=None)
    p.add_argument("--length", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write the main output here instead")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    _setup_logging(ns.verbose)
    if ns.command in ("inject", "synth") and ns.seed is None:
        ns.seed = 0
    try:
        with np.errstate(over="ignore", under="ignore"):
            return ns.func(ns)
    except (NumericalError, FloatingPointError) as exc:
        _diagnostic(level="error", kind="numerical", message=str(exc))
        return EXIT_NUMERICAL
    except (InputError, OSError, ValueError, KeyError) as exc:
        _diagnostic(level="error", kind="input", message=str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
