"""Command-line entry point: ``warmbho <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command writes a JSON run manifest next to its outputs; passing that
manifest back through ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import synthbench as sb
from .bho import run_bho, warm_start_init
from .errors import (
    DegenerateDimensionError,
    DivergenceError,
    StoreParseError,
    TargetEvaluationError,
    UndefinedCCoVError,
    UnknownRecordError,
)
from .history import ccov, load_store, save_store
from .hyperspace import canonical_cnn_space, denormalize
from .metafeature import (
    MeanInstanceWing,
    TrainConfig,
    compute_metafeatures,
    load_metafeatures,
    load_wing,
    save_metafeatures,
    save_wing,
    train,
    write_loss_csv,
)
from .sampling import sample

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
INIT_METHODS = sb.BASELINES + sb.WARM_METHODS


class UsageError(Exception):
    """Bad flags, config or input files; maps to exit code 2."""


def _fractions(text):
    try:
        vals = tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty fraction list")
    return vals


def _names(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


# -- configuration -----------------------------------------------------------


def read_config(path) -> dict:
    """Key-value file (``key = value`` per line, ``#`` comments) or a run manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        params = doc.get("params", doc)
        if not isinstance(params, dict):
            raise UsageError(f"{path}: 'params' must be an object")
        return params
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv):
    """Parse twice: config values become defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    params = read_config(args.config)
    known = {a.dest: a for a in sub._actions}
    for key, value in params.items():
        if key in ("config", "command"):
            continue
        if key not in known:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if isinstance(known[key], argparse._StoreTrueAction):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise UsageError(f"config key {key!r} expects true or false")
                value = value.lower() in ("true", "1", "yes")
            sub.set_defaults(**{key: bool(value)})
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif value is not None and not isinstance(value, str):
            value = str(value)
        sub.set_defaults(**{key: value})
    return parser.parse_args(argv)


def _write_manifest(path: Path, args, outputs, started):
    params = {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in vars(args).items()
        if k not in ("config", "command", "func")
    }
    doc = {
        "command": args.command,
        "config": args.config,
        "params": params,
        "seed": getattr(args, "seed", None),
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {path} is not writable: {exc}") from None
    return path


def _out_file(path) -> Path:
    path = Path(path)
    _out_dir(path.parent if str(path.parent) else Path("."))
    return path


def _load_store(path):
    if path is None:
        raise UsageError("--store is required")
    if not Path(path).is_file():
        raise UsageError(f"store file {path} does not exist")
    try:
        return load_store(path)
    except StoreParseError as exc:
        raise UsageError(str(exc)) from None


def _load_tasks(path) -> list:
    if path is None:
        raise UsageError("--tasks is required")
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read tasks file {path}: {exc}") from None
    return [sb.SyntheticTask.from_json(t) for t in doc["tasks"]]


def _load_wing(path):
    if path is None:
        raise UsageError("--weights is required for warm-start methods")
    try:
        return load_wing(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read weights {path}: {exc}") from None


def _store_with_mf(store, wing, args):
    if getattr(args, "metafeatures", None):
        try:
            loaded, tau, seed = load_metafeatures(store, args.metafeatures)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read meta-features {args.metafeatures}: {exc}") from None
        if (tau, seed) != (args.tau, args.seed):
            raise UsageError(f"meta-features were computed with tau={tau}, seed={seed}")
        return loaded
    return store.with_metafeatures(compute_metafeatures(wing, store, args.tau, args.seed))


# -- commands ------------------------------------------------------------------


def cmd_make_collection(args, started):
    out = _out_dir(args.out_dir)
    try:
        spec = sb.CollectionSpec(
            family_count=args.families,
            fractions=args.fractions,
            instance_dim=args.instance_dim,
            instances_per_task=args.instances_per_task,
            grid_size=args.grid_size,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.heldout > args.families:
        raise UsageError("--heldout cannot exceed --families")
    space = canonical_cnn_space()
    store, tasks = sb.make_collection(spec, space)
    held = sb.make_heldout(spec, space, args.heldout) if args.heldout else []
    store_path, tasks_path = out / "store.json", out / "tasks.json"
    save_store(store, store_path, binary_instances=args.binary)
    tasks_path.write_text(json.dumps({"tasks": [t.to_json() for t in tasks + held]}) + "\n")
    _write_manifest(out / "make-collection.manifest.json", args, [store_path, tasks_path], started)
    print(f"K={store.K} n={store.grid.n} store={store_path}")
    return EXIT_OK


def cmd_train_metric(args, started):
    store = _load_store(args.store)
    if store.K < 2:
        raise UsageError(f"training needs at least 2 records, store has {store.K}")
    out = _out_dir(args.out_dir)
    try:
        cfg = TrainConfig(
            tau=args.tau,
            iterations=args.iterations,
            batch_pairs=args.batch_pairs,
            step_size=args.step_size,
            decay=args.decay,
            seed=args.seed,
            val_pairs=args.val_pairs,
            eval_every=args.eval_every,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = train(store, cfg)
    paths = [out / "weights.json", out / "loss.csv", out / "metafeatures.json"]
    save_wing(result.wing, paths[0])
    write_loss_csv(result, paths[1])
    save_metafeatures(store, compute_metafeatures(result.wing, store, args.tau, args.seed), paths[2], args.tau, args.seed)
    _write_manifest(out / "train-metric.manifest.json", args, paths, started)
    print(f"train loss {result.initial_train_loss:.6g} -> {result.final_train_loss:.6g}; weights={paths[0]}")
    return EXIT_OK


def cmd_run(args, started):
    if args.k < 1 or args.k >= args.T:
        raise UsageError(f"need 1 <= k < T, got k={args.k}, T={args.T}")
    tasks = {t.id: t for t in _load_tasks(args.tasks)}
    if args.task not in tasks:
        raise UsageError(f"task {args.task!r} not found in {args.tasks}")
    task = tasks[args.task]
    space = canonical_cnn_space()
    if args.init in sb.BASELINES:
        init = sb.baseline_init(args.init, space, args.k, args.seed, task.id)
    else:
        store = _load_store(args.store)
        if args.init == "warmstart":
            wing = _load_wing(args.weights)
        else:
            wing = MeanInstanceWing(store.records[0].instances.dim)
        store = _store_with_mf(store, wing, args)
        # a task never retrieves itself
        if task.id in store.ids:
            store = store.subset([i for i in store.ids if i != task.id])
        if args.k > store.K:
            raise UsageError(f"k={args.k} exceeds the {store.K} stored records")
        init = warm_start_init(wing, store, task.instances(), args.k, args.tau, args.seed)
    try:
        acq = sb.cell_acquisition(args.acq, args.seed, task.id, args.kappa)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_file(args.out)
    trace = run_bho(lambda v: sb.evaluate_task(task, space, v), space, init, args.T, acq, args.init)
    trace.seed = args.seed
    trace.write_csv(out)
    _write_manifest(Path(f"{out}.manifest.json"), args, [out], started)
    named = ", ".join(f"{n}={x:g}" for n, x in zip(space.names, trace.best_vector))
    print(f"best error {trace.best_error:.6g} at {named}")
    return EXIT_OK


def cmd_compare(args, started):
    methods = args.methods
    for m in methods:
        if m not in INIT_METHODS:
            raise UsageError(f"unknown method {m!r}")
    if args.k < 1 or args.k >= args.T:
        raise UsageError(f"need 1 <= k < T, got k={args.k}, T={args.T}")
    if args.seeds < 1 or args.jobs < 1:
        raise UsageError("--seeds and --jobs must be >= 1")
    store = _load_store(args.store)
    held = [t for t in _load_tasks(args.tasks) if t.heldout]
    if not held:
        raise UsageError(f"{args.tasks} contains no held-out tasks")
    wing = None
    if "warmstart" in methods:
        wing = _load_wing(args.weights)
        store = _store_with_mf(store, wing, args)
    out = _out_dir(args.out_dir)
    rows_path, summary_path = out / "comparison.csv", out / "summary.csv"
    seeds = range(args.seed, args.seed + args.seeds)

    with open(rows_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sb.COMPARISON_HEADER)
        fh.flush()

        def flush(cell, trace, err):
            if err is not None:
                print(f"cell {cell} failed: {err}", file=sys.stderr)
                return
            for it, best in enumerate(trace.best_so_far, start=1):
                writer.writerow([cell.task_id, cell.method, cell.acq, cell.seed, it, repr(float(best))])
            fh.flush()

        try:
            cmp = sb.compare_initializations(
                store, held, wing, canonical_cnn_space(), methods, args.acqs, args.k, args.T,
                seeds, args.tau, args.seed, args.jobs, on_cell=flush,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    sb.write_rows(summary_path, sb.SUMMARY_HEADER, cmp.summary())
    _write_manifest(out / "compare.manifest.json", args, [rows_path, summary_path], started)
    done = len(cmp.traces)
    print(f"{done} runs completed, {len(cmp.failures)} failed; rows={rows_path}")
    return EXIT_RUNTIME if cmp.failures else EXIT_OK


def cmd_ccov(args, started):
    store = _load_store(args.store)
    out = _out_file(args.out)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", "dim_name", "subtracted_ccov", "warning"])
        for rec in store.records:
            for i, name in enumerate(store.grid.space.names):
                try:
                    value, warning = ccov(rec, store.grid, i) - 0.5, ""
                except DegenerateDimensionError:
                    value, warning = math.nan, "degenerate dimension"
                except UndefinedCCoVError:
                    value, warning = math.nan, "all-zero errors"
                writer.writerow([rec.id, name, repr(float(value)), warning])
    _write_manifest(Path(f"{out}.manifest.json"), args, [out], started)
    print(f"{store.K} records x {store.grid.space.d} dims -> {out}")
    return EXIT_OK


def cmd_sample(args, started):
    if args.space == "cnn":
        space = canonical_cnn_space()
        d = space.d
    else:
        space, d = None, args.d
    try:
        batch = sample(args.method, d, args.k, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_file(args.out)
    points = batch.points if space is None else np.array([denormalize(space, u) for u in batch.points])
    names = [f"u_{i + 1}" for i in range(d)] if space is None else space.names
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows([[repr(float(x)) for x in row] for row in points])
    _write_manifest(Path(f"{out}.manifest.json"), args, [out], started)
    print(f"{args.k} {args.method} points in {d} dims -> {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="warmbho", description="Warm-started Bayesian hyperparameter optimization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value file or run manifest; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = command("make-collection", cmd_make_collection, "build a synthetic history store")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--families", type=int, default=8)
    p.add_argument("--fractions", type=_fractions, default=sb.DEFAULT_FRACTIONS)
    p.add_argument("--instance-dim", type=int, default=8)
    p.add_argument("--instances-per-task", type=int, default=400)
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--heldout", type=int, default=4, help="held-out tasks written to tasks.json")
    p.add_argument("--binary", action="store_true", help="store instances in .f32 side files")

    p = command("train-metric", cmd_train_metric, "train the meta-feature network")
    p.add_argument("--store")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--tau", type=int, default=200)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch-pairs", type=int, default=8)
    p.add_argument("--step-size", type=float, default=1e-4)
    p.add_argument("--decay", type=float, default=1e-3)
    p.add_argument("--val-pairs", type=int, default=20)
    p.add_argument("--eval-every", type=int, default=50)

    p = command("run", cmd_run, "optimize one task")
    p.add_argument("--init", choices=INIT_METHODS, default="halton")
    p.add_argument("--tasks", help="tasks.json from make-collection")
    p.add_argument("--task", help="task id to optimize")
    p.add_argument("--store")
    p.add_argument("--weights")
    p.add_argument("--metafeatures")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--T", type=int, default=15)
    p.add_argument("--acq", choices=("ei", "ucb"), default="ei")
    p.add_argument("--kappa", type=float, default=2.0)
    p.add_argument("--tau", type=int, default=200)
    p.add_argument("--out", default="trace.csv")

    p = command("compare", cmd_compare, "compare initializations on held-out tasks")
    p.add_argument("--store")
    p.add_argument("--tasks")
    p.add_argument("--weights")
    p.add_argument("--metafeatures")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--methods", type=_names, default=INIT_METHODS)
    p.add_argument("--acqs", type=_names, default=("ei", "ucb"))
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--T", type=int, default=15)
    p.add_argument("--seeds", type=int, default=5, help="repetitions per cell")
    p.add_argument("--tau", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)

    p = command("ccov", cmd_ccov, "subtracted CCoV per record and dimension")
    p.add_argument("--store")
    p.add_argument("--out", default="ccov.csv")

    p = command("sample", cmd_sample, "draw an initial design")
    p.add_argument("--method", choices=("uniform", "latin", "halton"), default="halton")
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--space", choices=("unit", "cnn"), default="unit")
    p.add_argument("--out", default="sample.csv")
    return parser, subs


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, subs.choices[args.command], argv)
        return args.func(args, time.perf_counter())
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"warmbho: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnknownRecordError, StoreParseError) as exc:
        print(f"warmbho: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, TargetEvaluationError, ArithmeticError, OSError) as exc:
        print(f"warmbho: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("warmbho: interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
