"""Discrete optimal transport between two finite sets of weighted points.

Three solvers share one calling convention and return a :class:`SolveReport`:

* :func:`solve_exact` - linear program (assignment or dual simplex),
* :func:`solve_sinkhorn` - entropy-regularized Sinkhorn-Knopp scaling,
* :func:`solve_ipot` - inexact proximal point iterations, which converge
  to the unregularized optimum while only doing Sinkhorn-like updates.

Marginals default to uniform weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from otrep.errors import InputError, SolverError

__all__ = [
    "SolverSettings",
    "SolveReport",
    "uniform",
    "check_measure",
    "check_cost",
    "solve",
    "solve_exact",
    "solve_sinkhorn",
    "solve_ipot",
    "transport_cost",
    "plan_trace_ratio",
    "marginal_violation",
    "round_to_feasible",
]

METHODS = ("exact", "sinkhorn", "ipot")
MEASURE_ATOL = 1e-9


@dataclass(frozen=True)
class SolverSettings:
    """Knobs for the iterative solvers.

    ``convergence_tolerance`` is measured as the L1 violation of the row and
    column marginals, summed.
    """

    method: str = "ipot"
    entropic_epsilon: float = 1e-2
    ipot_beta: float = 0.05
    inner_iterations: int = 10
    outer_iterations: int = 1000
    convergence_tolerance: float = 1e-8
    log_domain: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown OT method {self.method!r}")
        for name in ("entropic_epsilon", "ipot_beta", "convergence_tolerance"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InputError(f"{name} must be strictly positive, got {value}")
        for name in ("inner_iterations", "outer_iterations"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be >= 1")


@dataclass
class SolveReport:
    plan: np.ndarray
    cost: float
    iterations_used: int
    final_marginal_violation: float
    converged: bool = True
    history: list = field(default_factory=list, repr=False)


def uniform(k: int) -> np.ndarray:
    if k < 1:
        raise InputError("a measure needs at least one atom")
    return np.full(k, 1.0 / k)


def check_measure(weights, name="measure") -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise InputError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InputError(f"{name} must have finite nonnegative entries")
    if abs(w.sum() - 1.0) > MEASURE_ATOL:
        raise InputError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


def check_cost(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise InputError("cost matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(M)):
        raise InputError("cost matrix has non-finite entries")
    if np.any(M < 0):
        raise InputError("cost matrix has negative entries")
    return M


def _prepare(M, mu, nu):
    M = check_cost(M)
    mu = uniform(M.shape[0]) if mu is None else check_measure(mu, "mu")
    nu = uniform(M.shape[1]) if nu is None else check_measure(nu, "nu")
    if M.shape != (mu.size, nu.size):
        raise InputError(
            f"cost matrix shape {M.shape} does not match marginals "
            f"({mu.size}, {nu.size})"
        )
    return M, mu, nu


def transport_cost(P, M) -> float:
    """Frobenius product ``sum_ij P_ij M_ij``."""
    P = np.asarray(P, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if P.shape != M.shape:
        raise InputError(f"plan shape {P.shape} != cost shape {M.shape}")
    return float(np.sum(P * M))


def marginal_violation(P, mu, nu) -> float:
    return float(
        np.abs(P.sum(axis=1) - mu).sum() + np.abs(P.sum(axis=0) - nu).sum()
    )


def plan_trace_ratio(P) -> float:
    """Trace of a square plan.

    With uniform marginals this is the fraction of mass that stays on the
    diagonal, i.e. the share of neurons matched to themselves.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InputError(f"trace ratio needs a square plan, got {P.shape}")
    return float(np.trace(P))


def round_to_feasible(P, mu, nu) -> np.ndarray:
    """Project an approximate plan onto the transport polytope.

    Rows and columns carrying too much mass are scaled down, then the
    missing mass is spread as a rank-one correction (Altschuler et al.,
    2017). The result is feasible up to floating point round-off and
    differs from ``P`` by at most the L1 marginal violation.
    """
    P = np.array(P, dtype=np.float64, copy=True)
    P[P < 0] = 0.0
    rows = P.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(rows > mu, mu / rows, 1.0)
    P *= scale[:, None]
    cols = P.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(cols > nu, nu / cols, 1.0)
    P *= scale[None, :]
    err_r = mu - P.sum(axis=1)
    err_c = nu - P.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        P += np.outer(err_r, err_c) / total
    return P


def _report(P, M, mu, nu, iterations, violation, tol, history=None):
    plan = round_to_feasible(P, mu, nu)
    return SolveReport(
        plan=plan,
        cost=transport_cost(plan, M),
        iterations_used=iterations,
        final_marginal_violation=violation,
        converged=violation <= tol,
        history=history or [],
    )


# --------------------------------------------------------------------------
# exact


def solve_exact(M, mu=None, nu=None) -> SolveReport:
    """Exact optimal transport plan (a vertex of the transport polytope).

    Square problems with uniform marginals are assignment problems, solved by
    the Jonker-Volgenant algorithm; the plan is a scaled permutation matrix.
    Everything else goes through the HiGHS dual simplex, which also returns a
    basic solution.
    """
    M, mu, nu = _prepare(M, mu, nu)
    n, m = M.shape
    if n == m and np.all(mu == mu[0]) and np.all(nu == nu[0]):
        rows, cols = linear_sum_assignment(M)
        P = np.zeros_like(M)
        P[rows, cols] = 1.0 / n
        return SolveReport(P, transport_cost(P, M), 1, marginal_violation(P, mu, nu))

    # equality constraints: row sums then column sums; one is redundant
    A_rows = np.kron(np.eye(n), np.ones((1, m)))
    A_cols = np.kron(np.ones((1, n)), np.eye(m))
    A_eq = np.vstack([A_rows, A_cols[:-1]])
    b_eq = np.concatenate([mu, nu[:-1]])
    res = linprog(
        M.ravel(),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverError(f"exact OT linear program failed: {res.message}")
    P = res.x.reshape(n, m)
    violation = marginal_violation(P, mu, nu)
    P = round_to_feasible(P, mu, nu)
    return SolveReport(P, transport_cost(P, M), int(res.nit), violation)


# --------------------------------------------------------------------------
# entropic / proximal


def _lse_rows(X):
    mx = X.max(axis=1, keepdims=True)
    return np.log(np.exp(X - mx).sum(axis=1)) + mx[:, 0]


def _lse_cols(X):
    mx = X.max(axis=0, keepdims=True)
    return np.log(np.exp(X - mx).sum(axis=0)) + mx[0]


def _log_scaling(logK, log_mu, log_nu, f, iterations):
    """Dual updates making exp(f_i + logK_ij + g_j) match the marginals.

    The column update comes last, so column sums are exact on exit.
    """
    for _ in range(iterations):
        g = log_nu - _lse_cols(logK + f[:, None])
        f = log_mu - _lse_rows(logK + g[None, :])
    g = log_nu - _lse_cols(logK + f[:, None])
    return f, g


def _scaling(K, mu, nu, a, iterations):
    for _ in range(iterations):
        b = nu / (K.T @ a)
        a = mu / (K @ b)
    b = nu / (K.T @ a)
    return a, b


def _stabilized_scaling(logK, mu, nu, f, g, iterations):
    """Log-domain scaling done cheaply.

    Plain scaling sweeps run on ``exp(logK + f + g)``, which is already close
    to a plan when the potentials are reasonable, and the scalings are then
    absorbed into the potentials. If anything over- or underflows the block
    is redone with log-sum-exp sweeps.
    """
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        K = np.exp(logK + f[:, None] + g[None, :])
        a, b = _scaling(K, mu, nu, np.ones_like(mu), iterations)
        ok = (np.all(np.isfinite(a)) and np.all(np.isfinite(b))
              and np.all(a > 0) and np.all(b > 0))
    if ok:
        return f + np.log(a), g + np.log(b)
    return _log_scaling(logK, np.log(mu), np.log(nu), f, iterations)


def _plain_scaling_checked(K, mu, nu, a, iterations, what):
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        a, b = _scaling(K, mu, nu, a, iterations)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SolverError(
            f"{what} scaling vectors overflowed or underflowed; "
            "rerun with log_domain=True"
        )
    return a, b


def _support(mu, nu):
    # iterative solvers run in log space, so atoms without mass are dropped
    return mu > 0, nu > 0


def _embed(P, rows, cols):
    out = np.zeros((rows.size, cols.size))
    out[np.ix_(rows, cols)] = P
    return out


def solve_sinkhorn(M, mu=None, nu=None, settings: SolverSettings | None = None) -> SolveReport:
    """Entropy-regularized transport, ``min <P, M> - eps * H(P)``.

    The reported cost is the unregularized ``<P, M>`` of the returned plan.
    ``outer_iterations`` bounds the number of scaling sweeps.
    """
    settings = settings or SolverSettings(method="sinkhorn")
    M_full, mu_full, nu_full = _prepare(M, mu, nu)
    rows, cols = _support(mu_full, nu_full)
    M, mu, nu = M_full[np.ix_(rows, cols)], mu_full[rows], nu_full[cols]
    eps = settings.entropic_epsilon
    tol = settings.convergence_tolerance
    check_every = 10
    violation = np.inf
    it = 0

    if settings.log_domain:
        logK = -M / eps
        f = -logK.max(axis=1)
        g = np.zeros_like(nu)
        while it < settings.outer_iterations:
            step = min(check_every, settings.outer_iterations - it)
            f, g = _stabilized_scaling(logK, mu, nu, f, g, step)
            it += step
            P = np.exp(f[:, None] + logK + g[None, :])
            violation = marginal_violation(P, mu, nu)
            if violation <= tol:
                break
    else:
        with np.errstate(under="ignore", over="ignore"):
            K = np.exp(-M / eps)
        a = np.ones_like(mu)
        while it < settings.outer_iterations:
            step = min(check_every, settings.outer_iterations - it)
            a, b = _plain_scaling_checked(K, mu, nu, a, step, "Sinkhorn")
            it += step
            P = a[:, None] * K * b[None, :]
            violation = marginal_violation(P, mu, nu)
            if violation <= tol:
                break
    return _report(_embed(P, rows, cols), M_full, mu_full, nu_full, it, violation, tol)


def solve_ipot(
    M, mu=None, nu=None, settings: SolverSettings | None = None, record_history=False
) -> SolveReport:
    """Inexact proximal point OT (Xie et al., 2019).

    Each outer step approximately solves
    ``min_P <P, M> + beta * KL(P || P_prev)`` with ``inner_iterations``
    scaling sweeps against the kernel ``P_prev * exp(-M / beta)``. Stops once
    the marginal violation is below tolerance and the plan has stopped
    moving (L1 change below tolerance), or when the outer budget runs out.

    ``ipot_beta`` is relative to the largest cost entry, so the iterates
    do not depend on the unit of ``M`` (a fixed absolute step makes every
    proximal subproblem a near-zero-temperature Sinkhorn problem once the
    costs are large, and the inner sweeps stall).

    With ``record_history`` the cost of every outer iterate is kept in
    ``report.history``.
    """
    settings = settings or SolverSettings()
    M_full, mu_full, nu_full = _prepare(M, mu, nu)
    rows, cols = _support(mu_full, nu_full)
    M, mu, nu = M_full[np.ix_(rows, cols)], mu_full[rows], nu_full[cols]
    scale = float(M.max()) if M.size and M.max() > 0 else 1.0
    beta = settings.ipot_beta * scale
    tol = settings.convergence_tolerance
    inner = settings.inner_iterations
    history = []
    violation = np.inf
    P = np.outer(mu, nu)

    if settings.log_domain:
        step_cost = -M / beta
        logP = np.log(P)
        # the row potential is carried over between outer steps, as in the
        # original algorithm; without it single-sweep IPOT stalls
        f = np.zeros_like(mu)
        ones = np.ones_like(mu)
        for it in range(1, settings.outer_iterations + 1):
            logQ = logP + step_cost
            with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
                K = np.exp(logQ + f[:, None])
                a, b = _scaling(K, mu, nu, ones, inner)
                ok = (np.all(np.isfinite(a)) and np.all(np.isfinite(b))
                      and np.all(a > 0) and np.all(b > 0))
            if ok:
                f = f + np.log(a)
                g = np.log(b)
                P_new = (a[:, None] * K) * b[None, :]
            else:
                f, g = _log_scaling(logQ, np.log(mu), np.log(nu), f, inner)
                P_new = np.exp(f[:, None] + logQ + g[None, :])
            logP = logQ + f[:, None] + g[None, :]
            moved = np.abs(P_new - P).sum()
            P = P_new
            if record_history:
                history.append(transport_cost(P, M))
            violation = marginal_violation(P, mu, nu)
            if violation <= tol and moved <= tol:
                break
    else:
        with np.errstate(under="ignore", over="ignore"):
            G = np.exp(-M / beta)
        a = np.ones_like(mu)
        for it in range(1, settings.outer_iterations + 1):
            with np.errstate(under="ignore"):
                Q = G * P
            a, b = _plain_scaling_checked(Q, mu, nu, a, inner, "IPOT")
            P_new = a[:, None] * Q * b[None, :]
            moved = np.abs(P_new - P).sum()
            P = P_new
            if record_history:
                history.append(transport_cost(P, M))
            violation = marginal_violation(P, mu, nu)
            if violation <= tol and moved <= tol:
                break
    return _report(_embed(P, rows, cols), M_full, mu_full, nu_full, it, violation, tol, history)


def solve(M, mu=None, nu=None, settings: SolverSettings | None = None) -> SolveReport:
    """Dispatch on ``settings.method``."""
    settings = settings or SolverSettings()
    if settings.method == "exact":
        return solve_exact(M, mu, nu)
    if settings.method == "sinkhorn":
        return solve_sinkhorn(M, mu, nu, settings)
    return solve_ipot(M, mu, nu, settings)
