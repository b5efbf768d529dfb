"""Command-line interface: simulate, train, fit, evaluate, export-arrival-pattern.

Options come from an optional ``--config`` JSON file; flags given on the
command line override it.  A config file may hold per-command sections
(``simulate``, ``train``, ``fit``, ``evaluate``); a command reads its own
section if present, otherwise the whole file.  ``--config builtin:NAME``
loads a config shipped with the package.

Exit codes: 0 on success, 2 for invalid configs or input files, 1 for any
other failure.  Errors are written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baselines import classical_records, fit_classical, markov_records, merge_records, oracle_records
from .classical import FAMILIES, model_from_dict, model_to_dict, sample_thinning
from .core import (
    ConfigError, Dataset, DatasetError, Event, EventSequence, SynthConfig,
    generate_synthetic, load_dataset, save_dataset,
)
from .markov import MarkovTable, fit_markov
from .metrics import evaluate_records
from .tpm import TpmConfig, TpmModel, TrainingDivergence, predict_dataset, train

CLASSICAL_FORMAT = "tpmkit.classical"


class CliError(Exception):
    def __init__(self, message: str, code: int = 1, details: Optional[list] = None):
        super().__init__(message)
        self.code = code
        self.details = details or []


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_config(path: Optional[str], section: str) -> dict:
    if not path:
        return {}
    try:
        if path.startswith("builtin:"):
            text = resources.files("tpmkit.data").joinpath(path.split(":", 1)[1] + ".json").read_text()
        else:
            text = Path(path).read_text()
        data = json.loads(text)
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {path}", 2) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}", 2) from exc
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object", 2)
    return dict(data.get(section, data))


def _override(cfg: dict, args, mapping: dict) -> dict:
    for flag, key in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(f"file not found: {path}", 1) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}", 2) from exc


def _load_data(path: str) -> Dataset:
    if not Path(path).exists():
        raise CliError(f"dataset not found: {path}", 1)
    return load_dataset(path)


# -- simulate ----------------------------------------------------------------------


def _simulate_classical(cfg: dict) -> Dataset:
    """Pure event-time data from a classical process; frames only at the origin and events."""
    known = {"process", "params", "n_sequences", "t_end", "seed"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError([f"unknown key(s) for classical simulation: {sorted(unknown)}"])
    try:
        model = model_from_dict({"family": cfg["process"], "params": cfg.get("params", {})})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"invalid process parameters: {exc}"]) from exc
    n = cfg.get("n_sequences", 100)
    t_end = cfg.get("t_end", 100.0)
    seed = cfg.get("seed", 0)
    if not isinstance(n, int) or n < 1:
        raise ConfigError(["n_sequences must be a positive integer"])
    if not (isinstance(t_end, (int, float)) and t_end > 0):
        raise ConfigError(["t_end must be positive"])
    seqs = []
    skipped = 0
    for i in range(n):
        times = sample_thinning(model, 0.0, float(t_end), seed=int(seed) * 100003 + i)
        if len(times) == 0:
            skipped += 1
            continue
        frame_times = np.concatenate([[0.0], times]) if times[0] > 0 else np.asarray(times)
        offset = frame_times.size - len(times)
        events = [Event(offset + k, float(t), 0, (0.0, 0.0)) for k, t in enumerate(times)]
        seqs.append(EventSequence(f"{cfg['process']}{i:05d}", frame_times,
                                  np.zeros((frame_times.size, 0)), events, source=cfg["process"]))
    meta = {"generator": cfg["process"], "config": cfg, "seed": seed, "skipped_empty": skipped}
    return Dataset(seqs, ["event"], frame_rate=1.0, metadata=meta)


def cmd_simulate(args) -> dict:
    cfg = _load_config(args.config, "simulate")
    cfg = _override(cfg, args, {"seed": "seed", "n_sequences": "n_sequences", "process": "process"})
    process = cfg.get("process", "synthetic")
    if process == "synthetic":
        cfg.pop("process", None)
        try:
            sc = SynthConfig.from_dict(cfg)
        except TypeError as exc:
            raise ConfigError([str(exc)]) from exc
        data = generate_synthetic(sc)
    elif process in FAMILIES:
        data = _simulate_classical(cfg)
    else:
        raise ConfigError([f"unknown process {process!r}"])
    if args.split is not None:
        if args.test_out is None:
            raise ConfigError(["--split needs --test-out"])
        if not 0 < args.split < len(data):
            raise ConfigError([f"--split must be between 1 and {len(data) - 1}"])
        train_part, test_part = data.split(args.split)
        train_part.metadata["part"] = "train"
        test_part.metadata["part"] = "test"
        save_dataset(train_part, args.out)
        save_dataset(test_part, args.test_out)
    else:
        save_dataset(data, args.out)
    return {"written": args.out, "n_sequences": len(data), "seed": data.metadata.get("seed")}


# -- train -------------------------------------------------------------------------


def cmd_train(args) -> dict:
    cfg = _load_config(args.config, "train")
    cfg = _override(cfg, args, {"head": "head", "epochs": "epochs", "lr": "lr", "seed": "seed",
                                "encoder": "encoder", "batch_size": "batch_size"})
    try:
        config = TpmConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from exc
    data = _load_data(args.data)
    kind = "regression" if args.baseline == "regression" else "tpm"
    try:
        model, log = train(data, config, kind=kind)
    except TrainingDivergence as exc:
        raise CliError(str(exc), 1) from exc
    run = {"config": config.to_dict(), "seed": config.seed, "data": str(args.data), "kind": kind}
    model.save(args.out, extra=run)
    log_path = args.log or str(Path(args.out).with_suffix(".log.json"))
    Path(log_path).write_text(_dump({**log.to_dict(), **run}))
    return {"checkpoint": args.out, "log": log_path, "kind": kind,
            "initial_loss": log.epoch_loss[0] if log.epoch_loss else None,
            "final_loss": log.epoch_loss[-1] if log.epoch_loss else None}


# -- fit ---------------------------------------------------------------------------


def cmd_fit(args) -> dict:
    cfg = _load_config(args.config, "fit")
    cfg = _override(cfg, args, {"model": "model", "k": "k"})
    unknown = set(cfg) - {"model", "k"}
    if unknown:
        raise ConfigError([f"unknown fit config key(s): {sorted(unknown)}"])
    family = cfg.get("model")
    data = _load_data(args.data)
    if family == "markov":
        k = cfg.get("k", 1)
        if not isinstance(k, int) or k < 1:
            raise ConfigError(["k must be an integer >= 1"])
        table = fit_markov(data.sequences, k)
        table.save(args.out, extra={"config": cfg, "seed": None, "data": str(args.data),
                                    "classes": data.classes})
        return {"written": args.out, "model": "markov", "k": k}
    if family not in FAMILIES:
        raise ConfigError([f"model must be one of {list(FAMILIES) + ['markov']}"])
    model = fit_classical(data, family)
    out = {"format": CLASSICAL_FORMAT, "version": 1, "model": model_to_dict(model),
           "classes": data.classes, "config": cfg, "seed": None, "data": str(args.data)}
    Path(args.out).write_text(_dump(out))
    return {"written": args.out, **model_to_dict(model)}


# -- evaluate ----------------------------------------------------------------------


def _predictor_records(source: str, data: Dataset, density_points: int = 0):
    if source == "oracle":
        return oracle_records(data), "oracle"
    raw = _read_json(source)
    fmt = raw.get("format")
    if fmt == "tpmkit.model":
        model = TpmModel.from_dict(raw)
        if model.kind == "tpm" and model.classes != data.classes:
            raise CliError(f"class mismatch: model {model.classes} vs dataset {data.classes}", 2)
        return predict_dataset(model, data, density_points=density_points), model.kind
    if fmt == CLASSICAL_FORMAT:
        return classical_records(model_from_dict(raw["model"]), data), raw["model"]["family"]
    if fmt == "tpmkit.markov":
        table = MarkovTable.from_dict(raw)
        classes = raw.get("run", {}).get("classes")
        if classes is not None and classes != data.classes:
            raise CliError(f"class mismatch: table {classes} vs dataset {data.classes}", 2)
        return markov_records(table, data), f"markov-{table.k}"
    raise CliError(f"{source}: unrecognised model file format {fmt!r}", 2)


def cmd_evaluate(args) -> dict:
    cfg = _load_config(args.config, "evaluate")
    cfg = _override(cfg, args, {"model": "model", "markov": "markov"})
    if "model" not in cfg:
        raise ConfigError(["a model (path or 'oracle') is required"])
    data = _load_data(args.data)
    records, label = _predictor_records(cfg["model"], data)
    if cfg.get("markov"):
        extra, mlabel = _predictor_records(cfg["markov"], data)
        records = merge_records(records, extra)
        label = f"{label}+{mlabel}"
    report = evaluate_records(records, data.classes)
    payload = {**report.to_dict(), "predictor": label, "config": cfg, "seed": None, "data": str(args.data)}
    Path(args.out).write_text(_dump(payload))
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    Path(csv_path).write_text(report.to_csv())
    if args.records:
        with open(args.records, "w") as fh:
            for r in records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return {"report": args.out, "csv": csv_path, "predictor": label, "mdr_error": report.mdr_error}


# -- export ------------------------------------------------------------------------


def cmd_export(args) -> dict:
    data = _load_data(args.data)
    raw = _read_json(args.model)
    if raw.get("format") != "tpmkit.model" or raw.get("kind") != "tpm":
        raise CliError("export-arrival-pattern needs a TPM checkpoint", 2)
    model = TpmModel.from_dict(raw)
    if model.classes != data.classes:
        raise CliError(f"class mismatch: model {model.classes} vs dataset {data.classes}", 2)
    if args.points < 2:
        raise ConfigError(["--points must be at least 2"])
    records = predict_dataset(model, data, density_points=args.points)
    rows = [{"sequence_id": r.sequence_id, "index": r.index, "current_time": r.current_time,
             "predicted_time": r.predicted_time, "true_time": r.true_time,
             "t": [p[0] for p in r.time_density_samples],
             "density": [p[1] for p in r.time_density_samples]} for r in records]
    if str(args.out).endswith(".csv"):
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sequence_id", "index", "current_time", "predicted_time", "true_time", "t", "density"])
            for row in rows:
                for t, f in zip(row["t"], row["density"]):
                    w.writerow([row["sequence_id"], row["index"], repr(row["current_time"]),
                                repr(row["predicted_time"]), repr(row["true_time"]), repr(t), repr(f)])
    else:
        Path(args.out).write_text(_dump({"grid_rule": "[t_j, t_j + 5 * (t_hat - t_j)]",
                                         "points": args.points, "model": str(args.model),
                                         "data": str(args.data), "seed": raw.get("run", {}).get("seed"),
                                         "transitions": rows}))
    return {"written": args.out, "transitions": len(rows)}


# -- entry point ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as JSON like every other failure."""

    def error(self, message):
        self.exit(2, json.dumps({"error": "usage", "message": message, "details": [self.format_usage()]}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tpmkit", description="Temporal point process models for event streams.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic or classical-process dataset")
    s.add_argument("--config", help="JSON config file or builtin:NAME")
    s.add_argument("--out", required=True, help="output JSONL path (header written alongside)")
    s.add_argument("--process", choices=("synthetic",) + FAMILIES)
    s.add_argument("--seed", type=int)
    s.add_argument("--n-sequences", type=int, dest="n_sequences")
    s.add_argument("--split", type=int, help="write the first N sequences to --out, the rest to --test-out")
    s.add_argument("--test-out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a TPM or the regression baseline")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log path (default: <out>.log.json)")
    t.add_argument("--head", choices=("A", "B"))
    t.add_argument("--encoder", choices=("concat", "pooled"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--seed", type=int)
    t.add_argument("--baseline", choices=("regression",))
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fit", help="fit a classical point process or a Markov chain")
    f.add_argument("--config")
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--model", choices=FAMILIES + ("markov",))
    f.add_argument("--k", type=int)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="teacher-forced evaluation report (JSON and CSV)")
    e.add_argument("--config")
    e.add_argument("--data", required=True)
    e.add_argument("--model", help="model file, or 'oracle' for the ground-truth predictor")
    e.add_argument("--markov", help="Markov table supplying category and location predictions")
    e.add_argument("--out", required=True, help="report JSON path")
    e.add_argument("--csv", help="report CSV path (default: <out>.csv)")
    e.add_argument("--records", help="also write per-transition predictions as JSON lines")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("export-arrival-pattern", help="next-event density samples per transition")
    x.add_argument("--data", required=True)
    x.add_argument("--model", required=True)
    x.add_argument("--out", required=True, help="output .json or .csv")
    x.add_argument("--points", type=int, default=201)
    x.set_defaults(func=cmd_export)
    return p


def _fail(kind: str, message: str, details, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "details": list(details)}) + "\n")
    return code


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), exc.errors, 2)
    except DatasetError as exc:
        return _fail("dataset", str(exc), exc.errors, 2)
    except CliError as exc:
        return _fail("usage" if exc.code == 2 else "runtime", str(exc), exc.details, exc.code)
    except OSError as exc:
        return _fail("io", str(exc), [], 1)
    except Exception as exc:  # noqa: BLE001 - last-resort report for scripted callers
        return _fail(type(exc).__name__, str(exc), [], 1)
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
