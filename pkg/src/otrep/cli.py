"""``otrep`` command-line interface.

Subcommands::

    otrep solve COST.csv [--mu F] [--nu F] [--method M] --out DIR
    otrep train-teacher     --config CFG.json --out DIR
    otrep finetune          --config CFG.json --out DIR
    otrep compress          --config CFG.json --out DIR
    otrep transfer-compress --config CFG.json --out DIR
    otrep sweep             --config CFG.json --out DIR
    otrep analyze           --config CFG.json --out DIR [--before A.npz --after B.npz] [--plot-data BINS]
    otrep selftest

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure
or non-convergence, 4 I/O error. Every output directory gets a
``manifest.txt`` of ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import jsonschema
import numpy as np

from otrep import __version__, analysis, harness, nn, ot, selftest
from otrep.errors import InputError, SolverError
from otrep.tasks import TaskSpec, generate_task

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SCHEMA_VERSION = 1
MANIFEST = "manifest.txt"

log = logging.getLogger("otrep")


class ConfigError(InputError):
    pass


# --------------------------------------------------------------------------
# dense matrix CSV


def parse_dense_csv(text, name="input"):
    """Parse a header-less, comma-separated matrix.

    Errors name the offending line and column (both 1-based).
    """
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        row = []
        for col, cell in enumerate(cells, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{name}: line {lineno}, column {col}: cannot parse {cell.strip()!r} as a number")
            if not np.isfinite(v):
                raise InputError(f"{name}: line {lineno}, column {col}: value must be finite")
            row.append(v)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(
                f"{name}: line {lineno}, column {min(len(row), width) + 1}: "
                f"expected {width} values, found {len(row)}"
            )
        rows.append(row)
    if not rows:
        raise InputError(f"{name}: line 1, column 1: empty matrix")
    return np.array(rows, dtype=np.float64)


def dense_csv_text(M):
    M = np.atleast_2d(M)
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in M)


def _read_text(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _IOFailure(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_vector(path, name):
    v = parse_dense_csv(_read_text(path), name)
    if min(v.shape) != 1:
        raise InputError(f"{name}: expected a single row or column, got shape {v.shape}")
    return v.ravel()


class _IOFailure(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def _spec_schema():
    props = {
        "generator": {"enum": ["gaussian_blobs", "two_moons_variant", "rotated_mixture"]},
        "num_classes": {"type": "integer", "minimum": 2},
        "input_dim": {"type": "integer", "minimum": 2},
        "samples_train": {"type": "integer", "minimum": 1},
        "samples_val": {"type": ["integer", "null"], "minimum": 1},
        "samples_test": {"type": "integer", "minimum": 1},
        "shift": {"enum": ["none", "label_refinement", "rotation_angle", "class_subset"]},
        "shift_magnitude": {"type": "number", "minimum": 0},
        "subclusters": {"type": "integer", "minimum": 1},
        "separation": {"type": "number", "exclusiveMinimum": 0},
        "noise": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
    }
    return {"type": "object", "properties": props, "additionalProperties": False}


_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_HIDDEN = {"type": "array", "items": _POS_INT, "minItems": 1}
_ARMS = list(harness.ARM_KINDS)

_SOLVER_SCHEMA = {
    "type": "object",
    "properties": {
        "method": {"enum": list(ot.METHODS)},
        "entropic_epsilon": _POS_NUM,
        "ipot_beta": _POS_NUM,
        "inner_iterations": _POS_INT,
        "outer_iterations": _POS_INT,
        "convergence_tolerance": _POS_NUM,
        "log_domain": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "iterations": {"type": "integer", "minimum": 0},
        "batch_size": _POS_INT,
        "learning_rate": {"type": "number", "minimum": 0},
        "decay_at": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 0}},
        "decay_factor": {"type": "number", "minimum": 0},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "alpha_grid": {"type": "array", "items": _POS_NUM, "minItems": 1},
        "tau_grid": {"type": "array", "items": _POS_NUM, "minItems": 1},
        "penalized_layers": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "solver": _SOLVER_SCHEMA,
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "selection_seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "task": _spec_schema(),
        "source": _spec_schema(),
        "target": _spec_schema(),
        "hidden": _HIDDEN,
        "teacher_hidden": _HIDDEN,
        "student_hidden": _HIDDEN,
        "arms": {"type": "array", "items": {"enum": _ARMS}, "minItems": 1},
        "alpha": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "tau": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "pretrain_fraction": {
            "oneOf": [{"type": "number", "minimum": 0, "maximum": 1},
                      {"enum": ["none", "partial", "full"]}]
        },
        "train": _TRAIN_SCHEMA,
        "teacher_train": _TRAIN_SCHEMA,
        "regime": {"enum": ["finetune", "compress", "transfer-compress"]},
        "batch_sizes": {"type": "array", "items": _POS_INT, "minItems": 1},
        "eval_samples": _POS_INT,
        "init_from_teacher": {"type": "boolean"},
    },
    "additionalProperties": False,
}


def _path_of(error):
    parts = [str(p) for p in error.absolute_path]
    return ".".join(parts) if parts else "(top level)"


def validate_config(cfg):
    """Raise :class:`ConfigError` naming the field path of the first violation."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(f"config field {_path_of(e)}: {e.message}")
    return cfg


def load_config(path):
    text = _read_text(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return validate_config(cfg)


def _require(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"config field {k}: required for this subcommand")


def _task_spec(d):
    return TaskSpec(**d)


def _train_config(d, base_seed=0):
    d = dict(d or {})
    if "solver" in d:
        d["solver"] = ot.SolverSettings(**d["solver"])
    for k in ("decay_at", "alpha_grid", "tau_grid", "penalized_layers", "seeds", "selection_seeds"):
        if d.get(k) is not None:
            d[k] = tuple(d[k])
    cfg = harness.TrainConfig(**d)
    if base_seed:
        # the seed override shifts every seed, keeping the configured count
        cfg = replace(
            cfg,
            seed=cfg.seed + base_seed,
            seeds=tuple(s + base_seed for s in cfg.seeds),
            selection_seeds=tuple(s + base_seed for s in cfg.selection_seeds),
        )
    return cfg


def apply_overrides(cfg, args):
    """Fold command-line overrides into the config dict (returns a copy)."""
    cfg = json.loads(json.dumps(cfg))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        cfg["alpha"] = args.alpha
    if getattr(args, "tau", None) is not None:
        cfg["tau"] = args.tau
    for key in ("train", "teacher_train"):
        section = cfg.setdefault(key, {}) if key == "train" else cfg.get(key)
        if section is None:
            continue
        if getattr(args, "batch_size", None) is not None and key == "train":
            section["batch_size"] = args.batch_size
        if getattr(args, "method", None) is not None:
            section.setdefault("solver", {})["method"] = args.method
    return validate_config(cfg)


def config_hash(cfg):
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# --------------------------------------------------------------------------
# outputs


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _IOFailure(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


def _write(out, name, text):
    try:
        return harness.atomic_write(out / name, text)
    except OSError as exc:
        raise _IOFailure(f"cannot write {out / name}: {exc.strerror or exc}") from exc


def read_manifest(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def write_manifest(out, subcommand, cfg_hash, seed, files):
    prev = out / MANIFEST
    if prev.exists():
        old = read_manifest(prev).get("artifact_version")
        if old is not None and old != __version__:
            log.warning("output directory was produced by version %s, now running %s", old, __version__)
    lines = [
        f"artifact_version={__version__}",
        f"subcommand={subcommand}",
        f"config_sha256={cfg_hash}",
        f"seed={seed}",
        f"schema_version={SCHEMA_VERSION}",
        f"files={','.join(sorted(files))}",
    ]
    _write(out, MANIFEST, "\n".join(lines) + "\n")


def _say(args, *parts):
    if not args.quiet:
        print(*parts)


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(args):
    settings = {}
    if args.config:
        settings = load_config(args.config).get("train", {}).get("solver", {})
    for flag, key in (("method", "method"), ("epsilon", "entropic_epsilon"), ("beta", "ipot_beta"),
                      ("inner", "inner_iterations"), ("outer", "outer_iterations"),
                      ("tol", "convergence_tolerance")):
        v = getattr(args, flag)
        if v is not None:
            settings[key] = v
    if args.plain_domain:
        settings["log_domain"] = False
    settings.setdefault("method", "ipot")
    solver = ot.SolverSettings(**settings)
    M = parse_dense_csv(_read_text(args.cost), str(args.cost))
    mu = _read_vector(args.mu, str(args.mu)) if args.mu else None
    nu = _read_vector(args.nu, str(args.nu)) if args.nu else None
    report = ot.solve(M, mu, nu, solver)

    out = _out_dir(args.out)
    _write(out, "plan.csv", dense_csv_text(report.plan))
    summary = (
        f"method={solver.method}\n"
        f"cost={report.cost!r}\n"
        f"iterations={report.iterations_used}\n"
        f"marginal_violation={report.final_marginal_violation!r}\n"
        f"converged={str(report.converged).lower()}\n"
    )
    _write(out, "report.txt", summary)
    cfg = {"cost": Path(args.cost).name, "mu": args.mu and Path(args.mu).name,
           "nu": args.nu and Path(args.nu).name, "solver": asdict(solver),
           "cost_sha256": hashlib.sha256(M.tobytes()).hexdigest()}
    write_manifest(out, "solve", config_hash(cfg), "", ["plan.csv", "report.txt"])
    _say(args, f"cost {report.cost}")
    _say(args, f"iterations {report.iterations_used}")
    _say(args, f"marginal violation {report.final_marginal_violation:.3e}")
    if not report.converged:
        return _fail(EXIT_NUMERIC, f"solver did not reach tolerance {solver.convergence_tolerance:g} "
                                   f"within {report.iterations_used} iterations; partial plan written")
    return EXIT_OK


def _prepare(args, required):
    cfg = apply_overrides(load_config(args.config), args)
    _require(cfg, *required)
    seed = cfg.get("seed", 0)
    train = _train_config(cfg.get("train"), seed)
    teacher_train = _train_config(cfg["teacher_train"], seed) if "teacher_train" in cfg else train
    return cfg, seed, train, teacher_train


def cmd_train_teacher(args):
    cfg, seed, train, teacher_train = _prepare(args, ())
    task = cfg.get("task") or cfg.get("source")
    hidden = cfg.get("hidden") or cfg.get("teacher_hidden")
    if task is None or hidden is None:
        raise ConfigError("config field task: train-teacher needs task (or source) and hidden")
    spec = _task_spec(task)
    model = harness.train_teacher(spec, tuple(hidden), teacher_train)
    data = generate_task(spec)
    acc = nn.accuracy(model, data.X_test, data.y_test)
    out = _out_dir(args.out)
    try:
        nn.save_checkpoint(model, out / "teacher.npz")
    except OSError as exc:
        raise _IOFailure(f"cannot write checkpoint: {exc}") from exc
    _write(out, "teacher.csv", harness.csv_text(
        [{"test_accuracy": acc, "parameters_sha256": model.parameters_checksum()}],
        ("test_accuracy", "parameters_sha256")))
    write_manifest(out, "train-teacher", config_hash(cfg), seed, ["teacher.npz", "teacher.csv"])
    _say(args, f"teacher test accuracy {acc:.4f}")
    return EXIT_OK


def _run_regime(regime, cfg, arm, train, teacher_train, recorder_rows=None):
    alpha, tau = cfg.get("alpha"), cfg.get("tau")
    if regime == "finetune":
        _require(cfg, "source", "target", "hidden")
        return harness.run_finetune(_task_spec(cfg["source"]), _task_spec(cfg["target"]),
                                    cfg["hidden"], arm, train, teacher_train, alpha=alpha)
    if regime == "compress":
        _require(cfg, "task", "teacher_hidden", "student_hidden")
        return harness.run_compress(_task_spec(cfg["task"]), cfg["teacher_hidden"], cfg["student_hidden"],
                                    arm, train, teacher_train, alpha=alpha, tau=tau,
                                    init_from_teacher=cfg.get("init_from_teacher", False))
    _require(cfg, "source", "target", "teacher_hidden", "student_hidden")
    return harness.run_transfer_compress(
        _task_spec(cfg["source"]), _task_spec(cfg["target"]), cfg["teacher_hidden"],
        cfg["student_hidden"], cfg.get("pretrain_fraction", "none"), arm, train,
        teacher_train, alpha=alpha)


def _trace_rows(results, task_name):
    rows = []
    for r in results:
        for seed, by_layer in sorted(r.traces.items()):
            for layer, series in sorted(by_layer.items()):
                run_id = f"{r.regime}-{r.arm}-b{r.batch_size}-s{seed}-l{layer}"
                rows.extend(analysis.trace_rows(series, run_id, task_name))
    return rows


def _default_arms(regime):
    return {
        "finetune": ["none", "l2", "l2_sp", "omega_i", "omega_u", "omega_p"],
        "compress": ["none", "kd", "omega_u", "omega_p"],
        "transfer-compress": ["none", "omega_u", "omega_p"],
    }[regime]


def cmd_experiment(args):
    regime = args.command
    cfg, seed, train, teacher_train = _prepare(args, ())
    arms = cfg.get("arms") or _default_arms(regime)
    results = []
    for arm in arms:
        r = _run_regime(regime, cfg, arm, train, teacher_train)
        results.append(r)
        sel = ", ".join(f"{k}={v:g}" for k, v in r.selected.items())
        _say(args, f"{arm:8s} {r.test_accuracy:.4f} +/- {r.test_std:.4f}"
                   f"  ({len(r.per_seed)} seeds{', ' + sel if sel else ''}; "
                   f"{1000 * r.seconds_per_iteration:.2f} ms/iteration)")
    return _finish_experiment(args, regime, cfg, seed, results)


def _finish_experiment(args, regime, cfg, seed, results):
    out = _out_dir(args.out)
    files = ["results.csv", "results_summary.csv"]
    _write(out, "results.csv", harness.csv_text(harness.result_rows(results), harness.RESULT_COLUMNS))
    _write(out, "results_summary.csv", harness.csv_text(harness.summary_rows(results), harness.SUMMARY_COLUMNS))
    rows = _trace_rows(results, (cfg.get("target") or cfg.get("task") or {}).get("generator", ""))
    if rows:
        _write(out, "traces.csv", harness.csv_text(rows, analysis.TRACE_COLUMNS))
        files.append("traces.csv")
    write_manifest(out, regime, config_hash(cfg), seed, files)
    return EXIT_OK


def cmd_sweep(args):
    cfg, seed, train, teacher_train = _prepare(args, ("regime",))
    regime = cfg["regime"]
    arms = cfg.get("arms") or ["none", "omega_p"]
    sizes = cfg.get("batch_sizes") or list(harness.BATCH_SIZES)
    if getattr(args, "batch_size", None) is not None:
        sizes = [args.batch_size]
    results = []
    for b in sizes:
        cfg_b = replace(train, batch_size=b)
        for arm in arms:
            r = _run_regime(regime, cfg, arm, cfg_b, teacher_train)
            results.append(r)
            _say(args, f"batch {b:4d} {arm:8s} {r.test_accuracy:.4f} +/- {r.test_std:.4f}")
    return _finish_experiment(args, "sweep", cfg, seed, results)


def cmd_analyze(args):
    cfg, seed, train, teacher_train = _prepare(args, ())
    out = _out_dir(args.out)
    files = []
    task_cfg = cfg.get("target") or cfg.get("task")
    if task_cfg is None:
        raise ConfigError("config field target: analyze needs target (or task)")
    spec = _task_spec(task_cfg)
    data = generate_task(spec)
    n_eval = min(cfg.get("eval_samples", 1000), data.X_test.shape[1])
    X_eval = data.X_test[:, :n_eval]

    rows = []
    if args.before or args.after:
        if not (args.before and args.after):
            raise InputError("--before and --after must be given together")
        try:
            before, after = nn.load_checkpoint(args.before), nn.load_checkpoint(args.after)
        except (OSError, KeyError) as exc:
            raise _IOFailure(f"cannot read checkpoint: {exc}") from exc
        profile = analysis.depth_trace_profile(before, after, X_eval)
        rows.extend(analysis.trace_rows(profile, "depth", spec.generator))
    else:
        _require(cfg, "source", "target", "hidden")
        arm = args.arm
        alpha = cfg.get("alpha")
        if alpha is None:
            raise ConfigError("config field alpha: analyze runs one fine-tune and needs a fixed alpha")
        recorder = analysis.TraceRecorder()
        teacher, student = harness.finetune_model(
            _task_spec(cfg["source"]), spec, cfg["hidden"], arm, train, alpha,
            seed=train.seeds[0], teacher_config=teacher_train, recorder=recorder)
        profile = analysis.depth_trace_profile(teacher, student, X_eval)
        rows.extend(analysis.trace_rows(profile, f"depth-{arm}-s{train.seeds[0]}", spec.generator))
        for layer, series in sorted(recorder.series_by_layer().items()):
            rows.extend(analysis.trace_rows(series, f"training-{arm}-s{train.seeds[0]}-l{layer}",
                                            spec.generator))
            if args.plot_data:
                binned = analysis.bin_series(series, args.plot_data)
                name = f"plot_data_l{layer}.csv"
                cols = ("bin_start", "bin_end", "mean", "min", "max", "count")
                _write(out, name, harness.csv_text([dict(zip(cols, b)) for b in binned], cols))
                files.append(name)
    for p in profile:
        _say(args, f"layer {p.index}: trace ratio {p.trace_ratio:.4f}")
    _write(out, "traces.csv", harness.csv_text(rows, analysis.TRACE_COLUMNS))
    files.append("traces.csv")
    hashed = {**cfg, "analyze": {"arm": args.arm, "before": args.before, "after": args.after}}
    write_manifest(out, "analyze", config_hash(hashed), seed, files)
    return EXIT_OK


def cmd_selftest(args):
    failed = 0
    for name, ok, detail in selftest.run_all():
        failed += not ok
        _say(args, f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    _say(args, f"{len(selftest.CHECKS) - failed}/{len(selftest.CHECKS)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="otrep", description="OT-based representation transfer toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON configuration file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--quiet", action="store_true", help="no summary on standard output")

    def overrides(p):
        p.add_argument("--seed", type=int, help="base seed added to every configured seed")
        p.add_argument("--method", choices=ot.METHODS, help="OT solver used by the ot_plan term")
        p.add_argument("--alpha", type=float, help="fixed regularization weight (skips selection)")
        p.add_argument("--tau", type=float, help="fixed distillation temperature")
        p.add_argument("--batch-size", type=int, dest="batch_size")

    p = sub.add_parser("solve", help="solve one transport problem from CSV files")
    p.add_argument("cost", help="dense cost matrix CSV")
    p.add_argument("--mu", help="row marginal (CSV, one row or column); uniform if omitted")
    p.add_argument("--nu", help="column marginal; uniform if omitted")
    p.add_argument("--method", choices=ot.METHODS)
    p.add_argument("--epsilon", type=float, help="entropic regularization (sinkhorn)")
    p.add_argument("--beta", type=float, help="proximal step (ipot), relative to max cost")
    p.add_argument("--inner", type=int, help="inner scaling sweeps per outer step")
    p.add_argument("--outer", type=int, help="outer iteration budget")
    p.add_argument("--tol", type=float, help="L1 marginal-violation tolerance")
    p.add_argument("--plain-domain", action="store_true", help="scaling iterations without log stabilization")
    common(p, config_required=False)
    p.set_defaults(func=cmd_solve)

    for name, func, helptext in (
        ("train-teacher", cmd_train_teacher, "train and save a teacher network"),
        ("finetune", cmd_experiment, "fine-tune a source network on a target task"),
        ("compress", cmd_experiment, "train a smaller student on the teacher's task"),
        ("transfer-compress", cmd_experiment, "small student on a new task with a large source teacher"),
        ("sweep", cmd_sweep, "repeat a regime over batch sizes"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        overrides(p)
        p.set_defaults(func=func)

    p = sub.add_parser("analyze", help="transport-plan trace diagnostics")
    common(p)
    overrides(p)
    p.add_argument("--before", help="checkpoint before fine-tuning")
    p.add_argument("--after", help="checkpoint after fine-tuning")
    p.add_argument("--arm", default="omega_p", choices=[a for a in harness.ARM_KINDS if a != "kd"],
                   help="regularizer of the analyzed fine-tune (default: omega_p)")
    p.add_argument("--plot-data", type=int, metavar="BINS", dest="plot_data",
                   help="also write the training series averaged into BINS bins")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("selftest", help="run the oracle and invariant checks")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the contract
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="otrep: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except _IOFailure as exc:
        return _fail(EXIT_IO, exc)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    except (TypeError, jsonschema.ValidationError) as exc:
        return _fail(EXIT_INPUT, f"invalid configuration: {exc}")
    except (SolverError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, f"numerical failure: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"I/O error: {exc}")


def _fail(code, message):
    print(f"otrep: error: {message}", file=sys.stderr)
    return code


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
