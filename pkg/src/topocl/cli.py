"""``topocl`` command line: run, compare, sweep, verify, gen-data.

Settings are resolved as built-in defaults, then a JSON config file
(``--config``), then command-line flags. Config keys are the
``TrainerConfig`` field names plus the dataset keys in ``DATA_DEFAULTS``.
A run manifest is also accepted as a config file; its ``resolved`` block
is used.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import data_dir, load_mnist, load_stream, make_permuted_tasks, make_rotated_tasks, \
    make_synthetic_tasks, save_stream
from .errors import TopoCLError
from .metrics import aggregate_reports, format_table, mean_std, write_aggregate, write_report
from .trainer import TrainerConfig, parse_method, run_experiment
from .verify import CHECKS, EXTRA_CHECKS, format_results, run_checks

log = logging.getLogger("topocl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

DATA_DEFAULTS = {
    "dataset": "synthetic",
    "tasks": 5,
    "per_task": 1000,
    "test_per_task": 500,
    "downsample": 2,
    "spread": 0.35,
    "schedule": "uniform",
    "stream": None,
}
DATASETS = ("permuted", "rotated", "synthetic")
COMPARE_METHODS = ("finetune", "er-ring", "er-res", "top-ring", "top-res", "multitask")
SWEEP_PARAMS = {"lambda": ("lam", float), "m": ("m", int), "mem-per-class": ("mem_per_class", int)}

# flag dest -> config key
_TRAINER_FLAGS = {
    "lam": "lam", "m": "m", "p": "p", "q": "q", "lr": "gamma", "batch": "batch_size",
    "mem_per_class": "mem_per_class", "hidden": "hidden", "weight_mode": "weight_mode",
}
_DATA_FLAGS = {
    "dataset": "dataset", "tasks": "tasks", "per_task": "per_task",
    "test_per_task": "test_per_task", "downsample": "downsample", "spread": "spread",
    "schedule": "schedule", "stream": "stream",
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset", choices=DATASETS, help="task stream (default synthetic)")
    g.add_argument("--tasks", type=int, help="number of tasks (default 5)")
    g.add_argument("--per-task", type=int, help="training examples per task (default 1000)")
    g.add_argument("--test-per-task", type=int, help="test examples per task (default 500)")
    g.add_argument("--downsample", type=int, help="IDX image pooling factor (default 2, 28x28 -> 14x14)")
    g.add_argument("--spread", type=float, help="synthetic blob spread (default 0.35)")
    g.add_argument("--schedule", choices=("uniform", "even"), help="rotation angle schedule")
    g.add_argument("--stream", help="load a stream cached by gen-data instead of generating one")
    t = p.add_argument_group("training")
    t.add_argument("--lambda", dest="lam", type=float, help="topological penalty weight (default 1)")
    t.add_argument("--m", type=int, help="iterations between decompositions (default 5)")
    t.add_argument("--p", type=float, help="barycenter weight of the past (default 9)")
    t.add_argument("--q", type=float, help="barycenter weight of the new task (default 1)")
    t.add_argument("--lr", type=float, help="SGD learning rate (default 0.1)")
    t.add_argument("--batch", type=int, help="batch size (default 10)")
    t.add_argument("--mem-per-class", type=int, help="memory slots per class and task (default 1)")
    t.add_argument("--hidden", type=int, nargs="+", help="hidden layer widths (default 64 64)")
    t.add_argument("--weight-mode", choices=("raw", "abs"), help="filtration weights (default raw)")
    p.add_argument("--config", help="JSON file with config keys")
    p.add_argument("--out", default="runs", help="output directory (default runs)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="topocl", description="Topological regularisation for continual learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    run = sub.add_parser("run", help="train one method with one seed")
    _common(run)
    run.add_argument("--method", default="top-ring",
                     help="finetune, er, er-ring, er-res, top, top-ring, top-res, multitask")
    run.add_argument("--seed", type=int, help="seed (default 0)")

    cmp_ = sub.add_parser("compare", help="several methods over several seeds")
    _common(cmp_)
    cmp_.add_argument("--methods", nargs="+", default=list(COMPARE_METHODS))
    cmp_.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])

    sw = sub.add_parser("sweep", help="grid over lambda, m or memory size")
    _common(sw)
    sw.add_argument("--param", choices=tuple(SWEEP_PARAMS), required=True)
    sw.add_argument("--values", nargs="+", required=True)
    sw.add_argument("--method", default="top-ring")
    sw.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])

    ver = sub.add_parser("verify", help="oracle and property checks")
    ver.add_argument("--checks", nargs="+", choices=tuple(CHECKS) + tuple(EXTRA_CHECKS))
    ver.add_argument("--trend", action="store_true", help="also run the desk-scale trend experiment")
    ver.add_argument("-v", "--verbose", action="store_true")

    gen = sub.add_parser("gen-data", help="write a task stream to disk")
    _common(gen)
    gen.add_argument("--seed", type=int, help="stream seed (default 0)")
    return parser


# -- configuration -----------------------------------------------------------

def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    if "resolved" in raw and "command" in raw:
        raw = raw["resolved"]  # a run manifest
    known = {f.name for f in dataclasses.fields(TrainerConfig)} | set(DATA_DEFAULTS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise UsageError(f"config file {path}: unknown keys {', '.join(unknown)}")
    return raw


def resolve(args) -> tuple[TrainerConfig, dict]:
    """Merge defaults, config file and flags into a trainer config and data settings."""
    merged = {**dataclasses.asdict(TrainerConfig()), **DATA_DEFAULTS}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for flag, key in {**_TRAINER_FLAGS, **_DATA_FLAGS}.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    data = {k: merged.pop(k) for k in DATA_DEFAULTS}
    if data["dataset"] not in DATASETS:
        raise UsageError(f"unknown dataset {data['dataset']!r}")
    try:
        cfg = TrainerConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return cfg, data


def build_stream(data: dict, seed: int):
    if data["stream"]:
        return load_stream(data["stream"])
    if data["dataset"] == "synthetic":
        return make_synthetic_tasks(data["tasks"], 10, 196, data["per_task"], seed=seed,
                                    test_per_task=data["test_per_task"], spread=data["spread"])
    base = load_mnist(data_dir(), downsample=data["downsample"])
    if data["dataset"] == "permuted":
        return make_permuted_tasks(base, data["tasks"], data["per_task"], seed, data["test_per_task"])
    return make_rotated_tasks(base, data["tasks"], data["per_task"], seed, data["test_per_task"],
                              schedule=data["schedule"])


def _check_methods(methods) -> None:
    for m in methods:
        try:
            parse_method(m)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


# -- execution ---------------------------------------------------------------

def _run_one(job):
    """Worker entry: (data settings, config dict, method, seed, report stem)."""
    data, cfg_dict, method, seed, stem = job
    cfg = TrainerConfig(**{**cfg_dict, "seed": seed})
    report = run_experiment(build_stream(data, seed), cfg, method)
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, stem.with_suffix(".json"))
    write_report(report, stem.with_suffix(".csv"), format="csv")
    return report


def _run_all(jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def write_manifest(out: Path, command: str, argv, cfg: TrainerConfig, data: dict, **extra) -> None:
    resolved = {**cfg.to_dict(), **data}
    manifest = {"command": command, "argv": list(argv), "version": __version__,
                "resolved": resolved, **extra}
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_run(args, argv) -> int:
    cfg, data = resolve(args)
    _check_methods([args.method])
    out = Path(args.out)
    stem = out / f"{args.method}_seed{cfg.seed}"
    write_manifest(out, "run", argv, cfg, data, method=args.method, seeds=[cfg.seed])
    (report,) = _run_all([(data, cfg.to_dict(), args.method, cfg.seed, str(stem))], 1)
    bwt = "--" if report.bwt is None else f"{100 * report.bwt:.2f}%"
    print(f"{args.method} seed {cfg.seed}: ACC {100 * report.acc:.2f}%  BWT {bwt}  "
          f"({report.decompositions} decompositions, {report.wall_clock:.1f}s)")
    print(f"report: {stem.with_suffix('.json')}")
    return EXIT_OK


def cmd_compare(args, argv) -> int:
    cfg, data = resolve(args)
    _check_methods(args.methods)
    out = Path(args.out)
    write_manifest(out, "compare", argv, cfg, data, methods=args.methods, seeds=args.seeds)
    jobs = [(data, cfg.to_dict(), m, s, str(out / m / f"seed{s}"))
            for m in args.methods for s in args.seeds]
    reports = _run_all(jobs, args.jobs)
    groups = {m: [r for r, j in zip(reports, jobs) if j[2] == m] for m in args.methods}
    rows = aggregate_reports(groups)
    write_aggregate(rows, out / "aggregate.csv")
    print(format_table(rows))
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    cfg, data = resolve(args)
    _check_methods([args.method])
    key, cast = SWEEP_PARAMS[args.param]
    try:
        values = [cast(v) for v in args.values]
        configs = [dataclasses.replace(cfg, **{key: v}) for v in values]
    except ValueError as exc:
        raise UsageError(f"--values: {exc}") from exc
    out = Path(args.out)
    write_manifest(out, "sweep", argv, cfg, data, method=args.method, seeds=args.seeds,
                   param=args.param, values=values)
    jobs = [(data, c.to_dict(), args.method, s, str(out / f"{args.param}={v}" / f"seed{s}"))
            for v, c in zip(values, configs) for s in args.seeds]
    reports = _run_all(jobs, args.jobs)
    rows = []
    n = len(args.seeds)
    for i, v in enumerate(values):
        chunk = reports[i * n:(i + 1) * n]
        acc_mean, acc_std = mean_std([r.acc for r in chunk])
        bwt_mean, bwt_std = mean_std([r.bwt for r in chunk])
        decomp = float(np.mean([r.decompositions for r in chunk]))
        log.info("%s=%s: %.1f decompositions per run", args.param, v, decomp)
        rows.append({"param": args.param, "value": v, "n": n, "acc_mean": acc_mean, "acc_std": acc_std,
                     "bwt_mean": bwt_mean, "bwt_std": bwt_std, "decompositions": decomp})
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    print(format_table([{**r, "group": f"{args.param}={r['value']}"} for r in rows]))
    for r in rows:
        print(f"{args.param}={r['value']}: {r['decompositions']:.0f} decompositions per run")
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    names = args.checks or list(CHECKS) + (["trend"] if args.trend else [])
    results = run_checks(names, echo=print)
    summary = format_results(results).splitlines()[-1]
    print(summary)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_gen_data(args, argv) -> int:
    cfg, data = resolve(args)
    if data["stream"]:
        raise UsageError("gen-data builds a stream; --stream is for reading one")
    stream = build_stream(data, cfg.seed)
    save_stream(stream, args.out)
    print(f"wrote {len(stream)} tasks ({stream.input_dim} features) to {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep,
            "verify": cmd_verify, "gen-data": cmd_gen_data}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("topocl: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"topocl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TopoCLError, OSError, ValueError) as exc:
        print(f"topocl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
