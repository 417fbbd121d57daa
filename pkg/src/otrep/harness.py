"""Desk-scale experiment regimes: fine-tuning, compression, and both at once.

The three regimes share one training loop (:func:`train`). Within a regime,
arms that use the same seed share the teacher, the student initialization
and the mini-batch order; only the regularization term differs.

Regularizer arms are named ``none``, ``l2``, ``l2_sp``, ``omega_i``
(identity coupling), ``omega_u`` (uniform coupling), ``omega_p`` (optimal
coupling) and ``kd`` (knowledge distillation).
"""

from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from otrep import nn
from otrep.analysis import TraceRecorder
from otrep.errors import InputError, SolverError
from otrep.ot import SolverSettings
from otrep.tasks import TaskSpec, generate_task

ARM_KINDS = {
    "none": None,
    "l2": "l2",
    "l2_sp": "l2_sp",
    "omega_i": "identity",
    "omega_u": "uniform",
    "omega_p": "ot_plan",
    "kd": "kd",
}
REPRESENTATION_ARMS = ("omega_i", "omega_u", "omega_p")
BATCH_SIZES = (16, 32, 64, 96, 128)


def logspace_grid(low, high, num=5):
    """``num`` logarithmically spaced values from ``low`` to ``high``."""
    if low <= 0 or high <= 0 or num < 1:
        raise InputError("logspace bounds must be positive and num >= 1")
    return tuple(float(v) for v in np.logspace(np.log10(low), np.log10(high), num))


# solver settings used inside the training loop: the plan is recomputed at
# every step, so a looser tolerance and a short budget are enough (rectangular
# plans with near-ties converge slowly; 30 steps put the cost within ~1e-3)
TRAINING_SOLVER = SolverSettings(convergence_tolerance=1e-5, outer_iterations=30)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 600
    batch_size: int = 64
    learning_rate: float = 0.02
    decay_at: tuple | None = None
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    alpha_grid: tuple = logspace_grid(1e-4, 1.0, 5)
    tau_grid: tuple = (4.0, 5.0, 10.0)
    penalized_layers: tuple = (-2,)
    solver: SolverSettings = TRAINING_SOLVER
    seeds: tuple = (0, 1, 2, 3, 4)
    selection_seeds: tuple = (0,)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.iterations < 0:
            raise InputError("iterations must be >= 0")
        if self.learning_rate < 0:
            raise InputError("learning_rate must be nonnegative")
        if any(a <= 0 for a in self.alpha_grid):
            raise InputError("alpha grid values must be > 0")
        if any(t <= 0 for t in self.tau_grid):
            raise InputError("temperatures must be > 0")
        if not self.seeds:
            raise InputError("at least one seed is required")

    def learning_rate_at(self, it):
        decay_at = self.decay_at
        if decay_at is None:
            decay_at = (int(round(2 * self.iterations / 3)),)
        drops = sum(1 for d in decay_at if it >= d)
        return self.learning_rate * self.decay_factor**drops


@dataclass
class RunResult:
    regime: str
    arm: str
    per_seed: list
    seeds: list
    selected: dict = field(default_factory=dict)
    validation: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    seconds_per_iteration: float = 0.0
    batch_size: int = 0

    @property
    def test_accuracy(self):
        return float(np.mean(self.per_seed))

    @property
    def test_std(self):
        return float(np.std(self.per_seed, ddof=1)) if len(self.per_seed) > 1 else 0.0


def pooled_std(a: RunResult, b: RunResult):
    return float(np.sqrt(0.5 * (a.test_std**2 + b.test_std**2)))


def non_inferior(candidate: RunResult, reference: RunResult, margin_stds=1.0):
    """``candidate.mean >= reference.mean - margin_stds * pooled std``."""
    return candidate.test_accuracy >= reference.test_accuracy - margin_stds * pooled_std(candidate, reference)


# --------------------------------------------------------------------------
# training loop


def batch_indices(n, batch_size, seed, iterations):
    """Mini-batch index arrays: reshuffled every epoch, fixed by ``seed``."""
    rng = np.random.default_rng([seed, 7])
    b = min(batch_size, n)
    out = []
    perm = rng.permutation(n)
    pos = 0
    for _ in range(iterations):
        if pos + b > n:
            perm = rng.permutation(n)
            pos = 0
        out.append(perm[pos : pos + b])
        pos += b
    return out


def build_terms(arm, alpha, config: TrainConfig, tau=None):
    kind = ARM_KINDS.get(arm, "?")
    if kind == "?":
        raise InputError(f"unknown regularizer arm {arm!r}")
    if kind is None:
        return []
    if kind in ("l2", "l2_sp"):
        return [nn.RegTerm(kind, alpha)]
    if kind == "kd":
        return [nn.RegTerm("kd", alpha, tau=tau if tau is not None else config.tau_grid[0])]
    return [nn.RegTerm(kind, alpha, layer=l, settings=config.solver) for l in config.penalized_layers]


def train(model, X, y, config: TrainConfig, terms=(), teacher=None, seed=0, recorder=None):
    """Run ``config.iterations`` SGD steps on ``model`` in place.

    ``teacher`` is a frozen model whose forward pass on each mini-batch gives
    the reference for representation and KD terms. ``recorder`` receives the
    transport plan of every ``ot_plan`` term.
    """
    needs_teacher = any(t.needs_teacher for t in terms)
    if needs_teacher and teacher is None:
        raise InputError("regularizer needs a teacher model")
    start = time.perf_counter()
    for it, idx in enumerate(batch_indices(X.shape[1], config.batch_size, seed, config.iterations)):
        Xb = X[:, idx]
        t_trace = nn.forward(teacher, Xb) if needs_teacher else None
        with np.errstate(over="ignore", invalid="ignore"):
            # divergence is reported just below
            obj = nn.loss_and_grad(model, Xb, y[idx], terms, t_trace)
        if not np.isfinite(obj.value):
            raise SolverError(f"training diverged at iteration {it} (objective {obj.value})")
        if recorder is not None:
            for layer, plan in obj.plans.items():
                recorder.record(it, layer, plan, Xb.shape[1], obj.costs.get(layer))
        nn.sgd_step(model, obj.grads, config.learning_rate_at(it), config.momentum, config.weight_decay)
    elapsed = time.perf_counter() - start
    return elapsed / max(config.iterations, 1)


@lru_cache(maxsize=32)
def _task(spec: TaskSpec):
    return generate_task(spec)


@lru_cache(maxsize=16)
def train_teacher(spec: TaskSpec, hidden: tuple, config: TrainConfig):
    """Train (and cache) an unregularized model on ``spec``."""
    data = _task(spec)
    model = nn.init_model(nn.mlp_specs(spec.input_dim, hidden, data.num_labels), config.seed)
    train(model, data.X_train, data.y_train, config, seed=config.seed)
    model.freeze_starting_point()
    model.velocity_w = [np.zeros_like(w) for w in model.weights]
    model.velocity_b = [np.zeros_like(b) for b in model.biases]
    return model


def select_hyperparameters(grid, evaluate):
    """Grid point with the best validation score.

    ``grid`` holds floats (alphas) or dicts with an ``alpha`` key (and
    optionally ``tau``); ``evaluate`` maps a point to a validation accuracy.
    Ties go to the smaller alpha, then the smaller tau.
    """
    grid = list(grid)
    if not grid:
        raise InputError("empty hyperparameter grid")

    def order(p):
        if isinstance(p, dict):
            return (p.get("alpha", 0.0), p.get("tau", 0.0))
        return (p, 0.0)

    best, best_score = None, -np.inf
    for point in sorted(grid, key=order):
        score = evaluate(point)
        if score > best_score:
            best, best_score = point, score
    return best


# --------------------------------------------------------------------------
# regimes


def _run_arm(regime, arm, make_student, data, config, teacher, alpha, tau, record_traces=True):
    """Shared driver: pick hyperparameters on validation, then run all seeds."""
    kind = ARM_KINDS.get(arm, "?")
    if kind == "?":
        raise InputError(f"unknown regularizer arm {arm!r}")

    def fit(seed, a, t, recorder=None):
        student = make_student(seed)
        spi = train(student, data.X_train, data.y_train, config,
                    build_terms(arm, a, config, t), teacher, seed, recorder)
        return student, spi

    selected = {}
    validation = []
    if kind is not None:
        if alpha is None or (kind == "kd" and tau is None):
            alphas = config.alpha_grid if alpha is None else (alpha,)
            taus = (config.tau_grid if tau is None else (tau,)) if kind == "kd" else (None,)
            grid = [{"alpha": a, "tau": t} for a in alphas for t in taus]

            def evaluate(point):
                accs = [nn.accuracy(fit(s, point["alpha"], point["tau"])[0], data.X_val, data.y_val)
                        for s in config.selection_seeds]
                validation.append({**point, "val_accuracy": float(np.mean(accs))})
                return float(np.mean(accs))

            best = select_hyperparameters(grid, evaluate)
            alpha, tau = best["alpha"], best["tau"]
        selected = {"alpha": alpha}
        if kind == "kd":
            selected["tau"] = tau

    per_seed, traces, spis = [], {}, []
    for seed in config.seeds:
        recorder = TraceRecorder() if (record_traces and kind == "ot_plan") else None
        student, spi = fit(seed, alpha, tau, recorder)
        per_seed.append(nn.accuracy(student, data.X_test, data.y_test))
        spis.append(spi)
        if recorder is not None:
            traces[seed] = recorder.series_by_layer()
    return RunResult(
        regime=regime,
        arm=arm,
        per_seed=per_seed,
        seeds=list(config.seeds),
        selected=selected,
        validation=validation,
        traces=traces,
        seconds_per_iteration=float(np.mean(spis)),
        batch_size=config.batch_size,
    )


def run_finetune(source: TaskSpec, target: TaskSpec, hidden, arm, config: TrainConfig,
                 teacher_config: TrainConfig | None = None, alpha=None, teacher=None):
    """Fine-tune a source-trained network on the target task.

    All layers but the last start from the teacher; the last layer is
    re-initialized for the target labels. Representation terms compare each
    penalized layer with the same layer of the frozen teacher on the same
    mini-batch.
    """
    if arm == "kd":
        raise InputError("knowledge distillation is not a fine-tuning arm")
    hidden = tuple(hidden)
    teacher = teacher or train_teacher(source, hidden, teacher_config or config)
    if teacher.widths[:-1] != list(hidden):
        raise InputError("teacher architecture does not match the fine-tuning architecture")
    data = _task(target)

    def make_student(seed):
        return teacher.with_new_head(data.num_labels, np.random.default_rng([seed, 3]))

    return _run_arm("finetune", arm, make_student, data, config, teacher, alpha, None)


def run_compress(task: TaskSpec, teacher_hidden, student_hidden, arm, config: TrainConfig,
                 teacher_config: TrainConfig | None = None, alpha=None, tau=None,
                 teacher=None, init_from_teacher=False):
    """Train a smaller student from scratch on the teacher's own task."""
    teacher_hidden, student_hidden = tuple(teacher_hidden), tuple(student_hidden)
    teacher = teacher or train_teacher(task, teacher_hidden, teacher_config or config)
    data = _task(task)
    if arm == "omega_i":
        for l in config.penalized_layers:
            if teacher.widths[l] != (list(student_hidden) + [data.num_labels])[l]:
                raise InputError(
                    "identity coupling is only applicable when student and "
                    "teacher layers have the same width"
                )

    def make_student(seed):
        if init_from_teacher:
            if tuple(teacher.widths[:-1]) != student_hidden:
                raise InputError("init_from_teacher needs identical architectures")
            return teacher.copy().freeze_starting_point()
        specs = nn.mlp_specs(task.input_dim, student_hidden, data.num_labels)
        return nn.init_model(specs, np.random.default_rng([seed, 5]).integers(2**31))

    uses_teacher = ARM_KINDS.get(arm) is not None and arm not in ("l2", "l2_sp")
    return _run_arm("compress", arm, make_student, data, config,
                    teacher if uses_teacher else None, alpha, tau)


def finetune_model(source: TaskSpec, target: TaskSpec, hidden, arm, config: TrainConfig,
                   alpha, seed=0, teacher_config: TrainConfig | None = None,
                   teacher=None, recorder=None):
    """One fine-tuning run at fixed ``alpha``; returns ``(teacher, student)``."""
    if ARM_KINDS.get(arm, "?") in ("?", "kd"):
        raise InputError(f"{arm!r} is not a fine-tuning arm")
    hidden = tuple(hidden)
    teacher = teacher or train_teacher(source, hidden, teacher_config or config)
    data = _task(target)
    student = teacher.with_new_head(data.num_labels, np.random.default_rng([seed, 3]))
    terms = build_terms(arm, alpha, config)
    train(student, data.X_train, data.y_train, config, terms, teacher, seed, recorder)
    return teacher, student


PRETRAIN_FRACTIONS = {"none": 0.0, "partial": 0.1, "full": 1.0}


@lru_cache(maxsize=16)
def pretrain_student(source: TaskSpec, student_hidden: tuple, fraction: float, config: TrainConfig):
    """Student trained (without regularization) on a fraction of the source data."""
    data = _task(source)
    specs = nn.mlp_specs(source.input_dim, student_hidden, data.num_labels)
    model = nn.init_model(specs, config.seed)
    X, y = data.subsample_train(fraction, np.random.default_rng([config.seed, 11]))
    train(model, X, y, config, seed=config.seed)
    return model


def run_transfer_compress(source: TaskSpec, target: TaskSpec, teacher_hidden, student_hidden,
                          pretrain_fraction, arm, config: TrainConfig,
                          teacher_config: TrainConfig | None = None,
                          pretrain_config: TrainConfig | None = None, alpha=None, teacher=None):
    """Transfer a big source teacher into a small student on the target task.

    ``pretrain_fraction`` is 0 (student starts from scratch), a fraction in
    (0, 1], or one of ``"none"``, ``"partial"`` (10%), ``"full"``.
    """
    if arm == "kd":
        raise InputError("knowledge distillation needs a shared label set")
    if isinstance(pretrain_fraction, str):
        pretrain_fraction = PRETRAIN_FRACTIONS[pretrain_fraction]
    if not 0.0 <= pretrain_fraction <= 1.0:
        raise InputError("pretrain_fraction must lie in [0, 1]")
    teacher_hidden, student_hidden = tuple(teacher_hidden), tuple(student_hidden)
    teacher = teacher or train_teacher(source, teacher_hidden, teacher_config or config)
    data = _task(target)
    if arm == "omega_i":
        for l in config.penalized_layers:
            if teacher.widths[:-1][l] != student_hidden[l]:
                raise InputError("identity coupling needs equal layer widths")
    pre = None
    if pretrain_fraction > 0:
        pre = pretrain_student(source, student_hidden, float(pretrain_fraction),
                               pretrain_config or teacher_config or config)

    def make_student(seed):
        rng = np.random.default_rng([seed, 5])
        if pre is not None:
            return pre.with_new_head(data.num_labels, rng)
        specs = nn.mlp_specs(target.input_dim, student_hidden, data.num_labels)
        return nn.init_model(specs, rng.integers(2**31))

    return _run_arm("transfer_compress", arm, make_student, data, config,
                    teacher if arm in REPRESENTATION_ARMS else None, alpha, None)


def batch_size_sweep(run, arms, batch_sizes=BATCH_SIZES, config: TrainConfig | None = None, **kwargs):
    """Run every arm at every batch size; ``run`` is one of the regimes.

    Returns ``{(arm, batch_size): RunResult}``.
    """
    config = config or TrainConfig()
    out = {}
    for b in batch_sizes:
        cfg = replace(config, batch_size=b)
        for arm in arms:
            out[(arm, b)] = run(arm=arm, config=cfg, **kwargs)
    return out


def batch_size_stability(sweep, arm="omega_p", reference="none", sizes=(32, 64, 96, 128)):
    """Spread of mean accuracy over ``sizes`` for ``arm`` and ``reference``.

    Returns ``(arm_range, reference_range, max_std)`` where ``max_std`` is the
    largest per-size standard deviation of ``arm``.
    """
    a = [sweep[(arm, b)].test_accuracy for b in sizes]
    r = [sweep[(reference, b)].test_accuracy for b in sizes]
    s = max(sweep[(arm, b)].test_std for b in sizes)
    return max(a) - min(a), max(r) - min(r), s


# --------------------------------------------------------------------------
# output


RESULT_COLUMNS = ("regime", "arm", "seed", "batch_size", "alpha", "tau", "test_accuracy")
SUMMARY_COLUMNS = ("regime", "arm", "batch_size", "mean", "std", "n_seeds", "alpha", "tau")


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def result_rows(results):
    for r in results:
        for seed, acc in zip(r.seeds, r.per_seed):
            yield {
                "regime": r.regime, "arm": r.arm, "seed": seed, "batch_size": r.batch_size,
                "alpha": r.selected.get("alpha"), "tau": r.selected.get("tau"),
                "test_accuracy": float(acc),
            }


def summary_rows(results):
    for r in results:
        yield {
            "regime": r.regime, "arm": r.arm, "batch_size": r.batch_size,
            "mean": r.test_accuracy, "std": r.test_std, "n_seeds": len(r.per_seed),
            "alpha": r.selected.get("alpha"), "tau": r.selected.get("tau"),
        }


def csv_text(rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def atomic_write(path, text):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def write_results(results, out_dir, prefix="results"):
    out_dir = Path(out_dir)
    a = atomic_write(out_dir / f"{prefix}.csv", csv_text(result_rows(results), RESULT_COLUMNS))
    b = atomic_write(out_dir / f"{prefix}_summary.csv", csv_text(summary_rows(results), SUMMARY_COLUMNS))
    return a, b


def config_dict(config: TrainConfig):
    d = asdict(config)
    d["solver"] = asdict(config.solver)
    return d
