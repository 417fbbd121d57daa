"""Regularizers comparing two layer representations neuron by neuron.

A representation is a ``(d, n)`` activation matrix: one row per neuron, one
column per example of the mini-batch. Each neuron is summarized by its row,
and two neurons are compared through the root-mean-square gap between their
activations over the batch. Every regularizer here is ``<P, M>`` for some
coupling ``P`` between the two sets of neurons:

* ``ot_plan`` - the optimal coupling (solved every call),
* ``identity`` - neuron ``i`` is matched to neuron ``i`` (same widths only),
* ``uniform`` - every neuron is matched to every other with equal weight.

Gradients are taken with respect to the student activations only, with the
coupling held fixed (for ``ot_plan`` this is the envelope theorem).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from otrep import ot
from otrep.errors import InputError

REGULARIZER_KINDS = ("ot_plan", "identity", "uniform")

# distances below this contribute no gradient (the norm is not differentiable at 0)
ZERO_GUARD = 1e-12


@dataclass
class RegularizerValueAndGrad:
    value: float
    grad_wrt_student: np.ndarray
    plan_used: np.ndarray | None = None
    solve_report: ot.SolveReport | None = None
    cost: np.ndarray | None = None


def _check_activations(A, name):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InputError(f"{name} activations must be a non-empty (d, n) matrix")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} activations contain non-finite values")
    return A


def _check_pair(student, teacher):
    A = _check_activations(student, "student")
    T = _check_activations(teacher, "teacher")
    if A.shape[1] != T.shape[1]:
        raise InputError(
            f"student and teacher were evaluated on different batches "
            f"({A.shape[1]} vs {T.shape[1]} examples)"
        )
    return A, T


def cost_matrix(student, teacher) -> np.ndarray:
    """Pairwise neuron distances ``M_ij = ||A_i - T_j||_2 / sqrt(n)``.

    The ``1/sqrt(n)`` factor makes ``M_ij`` the empirical RMS difference of
    the two neurons, so its scale does not depend on the batch size.
    """
    A, T = _check_pair(student, teacher)
    return cdist(A, T) / np.sqrt(A.shape[1])


def grad_activations(student, teacher, plan) -> np.ndarray:
    """Gradient of ``<plan, cost_matrix(A, T)>`` w.r.t. ``A`` at fixed plan."""
    A, T = _check_pair(student, teacher)
    plan = np.asarray(plan, dtype=np.float64)
    if plan.shape != (A.shape[0], T.shape[0]):
        raise InputError(f"plan shape {plan.shape} does not match ({A.shape[0]}, {T.shape[0]})")
    n = A.shape[1]
    M = cdist(A, T) / np.sqrt(n)
    W = np.zeros_like(M)
    live = M >= ZERO_GUARD
    W[live] = plan[live] / (n * M[live])
    return W.sum(axis=1)[:, None] * A - W @ T


def _with_plan(A, T, plan, M=None):
    M = cost_matrix(A, T) if M is None else M
    return RegularizerValueAndGrad(
        value=ot.transport_cost(plan, M),
        grad_wrt_student=grad_activations(A, T, plan),
        plan_used=plan,
        cost=M,
    )


def omega_p(student, teacher, settings: ot.SolverSettings | None = None) -> RegularizerValueAndGrad:
    """Optimal transport cost between the two neuron sets, uniform weights."""
    A, T = _check_pair(student, teacher)
    settings = settings or ot.SolverSettings()
    M = cost_matrix(A, T)
    report = ot.solve(M, settings=settings)
    out = _with_plan(A, T, report.plan, M)
    out.solve_report = report
    return out


def omega_i(student, teacher) -> RegularizerValueAndGrad:
    A, T = _check_pair(student, teacher)
    d = A.shape[0]
    if T.shape[0] != d:
        raise InputError(
            f"identity coupling needs equal widths, got {d} and {T.shape[0]}"
        )
    return _with_plan(A, T, np.eye(d) / d)


def omega_u(student, teacher) -> RegularizerValueAndGrad:
    A, T = _check_pair(student, teacher)
    d, dp = A.shape[0], T.shape[0]
    return _with_plan(A, T, np.full((d, dp), 1.0 / (d * dp)))


def regularizer(kind: str, student, teacher, settings: ot.SolverSettings | None = None):
    if kind == "ot_plan":
        return omega_p(student, teacher, settings)
    if kind == "identity":
        return omega_i(student, teacher)
    if kind == "uniform":
        return omega_u(student, teacher)
    raise InputError(f"unknown representation regularizer {kind!r}")
