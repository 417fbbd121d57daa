"""Transport-plan diagnostics: how many neurons keep their role.

For square plans with uniform marginals the trace of the optimal plan is the
fraction of neurons whose activation stays closest to their own initial
activation. It is measured two ways:

* post hoc, layer by layer, between two models on a fixed evaluation set
  (:func:`depth_trace_profile`, exact solver);
* during training, from the plans the ``ot_plan`` regularizer already
  computed on each mini-batch (:class:`TraceRecorder`).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from otrep import nn, ot
from otrep.errors import InputError
from otrep.representation import ZERO_GUARD, cost_matrix

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("run_id", "task", "layer_or_iteration", "trace_ratio", "batch_size")


@dataclass(frozen=True)
class TraceSeries:
    """One trace measurement.

    ``tie_adjusted`` also counts as kept the mass a plan moves between two
    neurons at zero distance (typically units that are dead on the whole
    batch), which any coupling may shuffle at no cost.
    """

    index: int
    trace_ratio: float
    batch_size: int
    layer: int | None = None
    tie_adjusted: float | None = None


def exact_trace_ratio(M):
    """Trace of an exact optimal plan for a square cost matrix.

    Among optimal plans one with the largest trace is reported, so that
    neurons with tied costs (e.g. two dead units) are not counted as moved.
    The tie-break solves the assignment problem on ``M - eta * I`` and keeps
    the result only if it is still optimal for ``M``.
    """
    M = np.asarray(M, dtype=np.float64)
    report = ot.solve_exact(M)
    n = M.shape[0]
    scale = max(float(np.abs(M).max()), 1e-300)
    rows, cols = linear_sum_assignment(M - (1e-9 * scale / n) * np.eye(n))
    cost = float(M[rows, cols].sum()) / n
    if cost <= report.cost + 1e-12 * scale:
        return float(np.mean(rows == cols))
    return ot.plan_trace_ratio(report.plan)


def tie_adjusted_ratio(plan, cost):
    """Trace ratio plus the off-diagonal mass between zero-distance neurons."""
    plan = np.asarray(plan, dtype=np.float64)
    tied = (np.asarray(cost) <= ZERO_GUARD) & ~np.eye(plan.shape[0], dtype=bool)
    return min(1.0, ot.plan_trace_ratio(plan) + float(plan[tied].sum()))


def depth_trace_profile(model_before, model_after, X_eval, layers=None, workers=None):
    """Trace ratio of the exact plan between the two models at every hidden
    layer, computed on the whole evaluation set ``X_eval`` (features x n).

    Layers are solved on a thread pool of ``workers`` threads (default: one
    per layer); the result order follows ``layers``.
    """
    if [s.output_dim for s in model_before.specs[:-1]] != [s.output_dim for s in model_after.specs[:-1]] \
            or model_before.specs[0].input_dim != model_after.specs[0].input_dim:
        raise InputError("depth profile needs two models with the same hidden architecture")
    before = nn.forward(model_before, X_eval)
    after = nn.forward(model_after, X_eval)
    layers = range(model_before.depth - 1) if layers is None else layers
    layers = list(layers)
    n = X_eval.shape[1]

    def one(l):
        r = exact_trace_ratio(cost_matrix(after.activations[l], before.activations[l]))
        return TraceSeries(index=l, trace_ratio=r, batch_size=n, layer=l, tie_adjusted=r)

    with ThreadPoolExecutor(max_workers=workers or max(len(layers), 1)) as pool:
        out = list(pool.map(one, layers))
    ratios = [s.trace_ratio for s in out]
    if any(b > a + 1e-9 for a, b in zip(ratios, ratios[1:])):
        log.info("trace ratio increases with depth somewhere: %s", ratios)
    return out


class TraceRecorder:
    """Collects ``tr(P)`` of the plans produced during training."""

    def __init__(self):
        self.rows = []

    def record(self, iteration, layer, plan, batch_size, cost=None):
        if plan.shape[0] != plan.shape[1]:
            return
        ratio = ot.plan_trace_ratio(plan)
        adjusted = None if cost is None else tie_adjusted_ratio(plan, cost)
        self.rows.append(TraceSeries(iteration, ratio, batch_size, layer, adjusted))

    def series(self, layer=None):
        return [r for r in self.rows if layer is None or r.layer == layer]

    def series_by_layer(self):
        out = {}
        for r in self.rows:
            out.setdefault(r.layer, []).append(r)
        return out


def trace_rows(series, run_id="", task=""):
    for s in series:
        yield {
            "run_id": run_id,
            "task": task,
            "layer_or_iteration": s.index,
            "trace_ratio": s.trace_ratio,
            "batch_size": s.batch_size,
        }


def bin_series(series, bins=20):
    """Average consecutive points into at most ``bins`` bins.

    Returns rows ``(bin_start, bin_end, mean, min, max, count)``.
    """
    if bins < 1:
        raise InputError("bins must be >= 1")
    series = sorted(series, key=lambda s: s.index)
    if not series:
        return []
    chunks = np.array_split(np.arange(len(series)), min(bins, len(series)))
    out = []
    for chunk in chunks:
        vals = np.array([series[i].trace_ratio for i in chunk])
        out.append((series[chunk[0]].index, series[chunk[-1]].index,
                    float(vals.mean()), float(vals.min()), float(vals.max()), len(chunk)))
    return out
