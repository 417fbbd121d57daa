"""Fast oracle and invariant checks, run by ``otrep selftest``.

Each check returns ``(ok, detail)``. They use small random instances with
fixed seeds and take well under a second each.
"""

from __future__ import annotations

import itertools

import numpy as np

from otrep import distill, nn, ot, representation as rep
from otrep.analysis import exact_trace_ratio


def _brute_force(M):
    n = M.shape[0]
    return min(sum(M[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))


def check_exact_vs_permutations():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(5):
        M = rng.random((5, 5))
        oracle = _brute_force(M)
        worst = max(worst, abs(ot.solve_exact(M).cost - oracle) / oracle)
    return worst < 1e-12, f"worst relative error {worst:.2e}"


def check_ipot_vs_exact():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(5):
        d, dp = rng.integers(2, 8, size=2)
        mu = rng.integers(1, 10, size=d).astype(float)
        nu = rng.integers(1, 10, size=dp).astype(float)
        M = rng.random((d, dp))
        exact = ot.solve_exact(M, mu / mu.sum(), nu / nu.sum()).cost
        approx = ot.solve_ipot(M, mu / mu.sum(), nu / nu.sum()).cost
        worst = max(worst, abs(approx - exact) / exact)
    return worst < 1e-5, f"worst relative error {worst:.2e}"


def check_sinkhorn_entropic_limit():
    M = np.random.default_rng(2).random((4, 4))
    s = ot.SolverSettings(method="sinkhorn", entropic_epsilon=1e6 * M.max())
    dev = float(np.abs(ot.solve_sinkhorn(M, settings=s).plan - 1 / 16).max())
    return dev < 1e-3, f"max deviation from uniform {dev:.2e}"


def check_solver_feasibility():
    rng = np.random.default_rng(3)
    worst = 0.0
    for method in ("sinkhorn", "ipot"):
        s = ot.SolverSettings(method=method, entropic_epsilon=0.05)
        r = ot.solve(rng.random((6, 4)), settings=s)
        worst = max(worst, ot.marginal_violation(r.plan, ot.uniform(6), ot.uniform(4)))
    return worst <= 1e-8, f"worst marginal violation {worst:.2e}"


def check_permutation_invariance():
    rng = np.random.default_rng(4)
    A, T = rng.normal(size=(8, 16)), rng.normal(size=(8, 16))
    sigma = rng.permutation(8)
    s = ot.SolverSettings(method="exact")
    gap = abs(rep.omega_p(A[sigma], T, s).value - rep.omega_p(A, T, s).value)
    return gap < 1e-10, f"|change| {gap:.2e}"


def check_coupling_ordering():
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(10):
        A, T = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
        p = rep.omega_p(A, T, ot.SolverSettings(method="exact")).value
        bad += p > rep.omega_i(A, T).value + 1e-8 or p > rep.omega_u(A, T).value + 1e-8
    return bad == 0, f"{bad} ordering violations"


def check_envelope_gradient():
    rng = np.random.default_rng(6)
    A, T = rng.normal(size=(4, 6)), rng.normal(size=(5, 6))
    P = rep.omega_p(A, T, ot.SolverSettings(method="exact")).plan_used
    g = rep.grad_activations(A, T, P)
    fd = np.zeros_like(A)
    h = 1e-6
    for idx in np.ndindex(A.shape):
        Ap, Am = A.copy(), A.copy()
        Ap[idx] += h
        Am[idx] -= h
        fd[idx] = (ot.transport_cost(P, rep.cost_matrix(Ap, T))
                   - ot.transport_cost(P, rep.cost_matrix(Am, T))) / (2 * h)
    err = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    return err < 1e-4, f"relative error {err:.2e}"


def check_zero_distance_guard():
    A = np.random.default_rng(7).normal(size=(4, 5))
    finite = all(np.all(np.isfinite(rep.regularizer(k, A, A.copy()).grad_wrt_student))
                 for k in rep.REGULARIZER_KINDS)
    return finite, "finite" if finite else "non-finite gradient"


def check_kd_identities():
    rng = np.random.default_rng(8)
    Z = rng.normal(size=(5, 3))
    kl, _ = distill.kd_loss_and_grad(Z, Z, 4.0)
    shift = np.abs(distill.soften(Z + 7.0, 2.0) - distill.soften(Z, 2.0)).max()
    temp = np.abs(distill.soften(Z, 5.0) - distill.soften(Z / 5.0, 1.0)).max()
    ref = np.abs(distill.soften(np.array([[2.0], [0.0]]), 2.0)[:, 0] - [0.731059, 0.268941]).max()
    ok = kl <= 1e-12 and shift <= 1e-12 and temp <= 1e-12 and ref <= 1e-6
    return ok, f"kl {kl:.1e}, shift {shift:.1e}, temperature {temp:.1e}, reference {ref:.1e}"


def check_trace_ratio():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(6, 10))
    same = exact_trace_ratio(rep.cost_matrix(A, A))
    swapped = exact_trace_ratio(rep.cost_matrix(A[[1, 0]], A[:2]))
    return same == 1.0 and swapped == 0.0, f"identity {same}, swap {swapped}"


def check_permuted_network():
    rng = np.random.default_rng(10)
    model = nn.init_model(nn.mlp_specs(3, (5,), 2), 0)
    X = rng.normal(size=(3, 4))
    out = nn.permute_hidden(model, 0, rng.permutation(5))
    gap = float(np.abs(nn.forward(out, X).logits - nn.forward(model, X).logits).max())
    return gap < 1e-12, f"max output change {gap:.1e}"


CHECKS = {
    "exact solver vs permutation enumeration": check_exact_vs_permutations,
    "IPOT vs exact solver": check_ipot_vs_exact,
    "Sinkhorn entropic limit": check_sinkhorn_entropic_limit,
    "iterative solver feasibility": check_solver_feasibility,
    "OT cost permutation invariance": check_permutation_invariance,
    "OT <= identity, uniform couplings": check_coupling_ordering,
    "envelope gradient vs finite differences": check_envelope_gradient,
    "zero-distance gradient guard": check_zero_distance_guard,
    "distillation identities": check_kd_identities,
    "trace ratio of identity and swap": check_trace_ratio,
    "hidden permutation keeps the function": check_permuted_network,
}


def run_all():
    """Yield ``(name, ok, detail)`` for every check; exceptions count as failures."""
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        yield name, bool(ok), detail
