import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import brute_force_ot
from otrep import ot
from otrep.errors import InputError, SolverError


def random_measure(rng, k):
    w = rng.integers(1, 10, size=k).astype(float)
    return w / w.sum()


# ---------------------------------------------------------------- exact


def test_exact_single_atom():
    r = ot.solve_exact([[5.0]], [1.0], [1.0])
    np.testing.assert_array_equal(r.plan, [[1.0]])
    assert r.cost == 5.0


def test_exact_zero_cost_diagonal():
    r = ot.solve_exact([[0, 1], [1, 0]])
    np.testing.assert_allclose(r.plan, [[0.5, 0], [0, 0.5]])
    assert r.cost == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_exact_matches_permutation_enumeration(seed):
    rng = np.random.default_rng(seed)
    M = rng.random((5, 5))
    oracle, _ = brute_force_ot(M)
    assert ot.solve_exact(M).cost == pytest.approx(oracle, rel=1e-12)


def test_exact_rectangular_uses_lp(rng):
    M = rng.random((3, 7))
    mu, nu = random_measure(rng, 3), random_measure(rng, 7)
    r = ot.solve_exact(M, mu, nu)
    np.testing.assert_allclose(r.plan.sum(axis=1), mu, atol=1e-12)
    np.testing.assert_allclose(r.plan.sum(axis=0), nu, atol=1e-12)
    # a vertex of the 3x7 transportation polytope has at most 3 + 7 - 1 nonzeros
    assert np.count_nonzero(r.plan > 1e-12) <= 9


def test_exact_rejects_bad_input():
    with pytest.raises(InputError):
        ot.solve_exact(np.ones((2, 3)), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(InputError):
        ot.solve_exact([[np.nan, 1.0], [1.0, 0.0]])
    with pytest.raises(InputError):
        ot.solve_exact([[1.0, 1.0]], [1.0], [0.7, 0.7])


# ---------------------------------------------------------------- sinkhorn


def test_sinkhorn_huge_epsilon_gives_independent_coupling(rng):
    M = rng.random((2, 2))
    s = ot.SolverSettings(method="sinkhorn", entropic_epsilon=1e6 * M.max())
    r = ot.solve_sinkhorn(M, settings=s)
    assert np.abs(r.plan - 0.25).max() < 1e-3


def test_sinkhorn_zero_cost():
    r = ot.solve_sinkhorn(np.zeros((3, 4)), settings=ot.SolverSettings(method="sinkhorn"))
    np.testing.assert_allclose(r.plan, np.full((3, 4), 1 / 12), atol=1e-12)
    assert r.cost == 0.0


def test_sinkhorn_gap_within_entropic_bound():
    # <P_eps, M> - OT <= eps * (H(P_eps) - H(P*)) <= eps * log(n m)
    rng = np.random.default_rng(3)
    M = rng.random((4, 6))
    eps = 0.02
    s = ot.SolverSettings(method="sinkhorn", entropic_epsilon=eps, outer_iterations=20000)
    r = ot.solve_sinkhorn(M, settings=s)
    exact = ot.solve_exact(M).cost
    assert r.converged
    assert -1e-12 <= r.cost - exact <= eps * np.log(24)


def test_sinkhorn_plain_domain_overflow_is_reported():
    M = np.array([[0.0, 1000.0], [1000.0, 0.0]]) + np.array([[0, 0], [0, 900.0]])
    s = ot.SolverSettings(method="sinkhorn", entropic_epsilon=1.0, log_domain=False)
    with pytest.raises(SolverError, match="log_domain"):
        ot.solve_sinkhorn(M, settings=s)
    # the log-domain default handles the same instance
    r = ot.solve_sinkhorn(M, settings=ot.SolverSettings(method="sinkhorn", entropic_epsilon=1.0))
    assert np.isfinite(r.cost)


# ---------------------------------------------------------------- ipot


def test_ipot_swap_cost():
    r = ot.solve_ipot([[0, 1], [1, 0]])
    assert r.cost < 1e-6


def test_ipot_matches_permutation_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        M = rng.random((n, n))
        oracle, _ = brute_force_ot(M)
        cost = ot.solve_ipot(M).cost
        assert abs(cost - oracle) / max(oracle, 1e-12) < 1e-5


def test_ipot_rectangular_matches_exact():
    rng = np.random.default_rng(8)
    M = rng.random((3, 7))
    assert ot.solve_ipot(M).cost == pytest.approx(ot.solve_exact(M).cost, rel=1e-5)


def test_ipot_zero_mass_atoms(rng):
    M = rng.random((3, 4))
    mu = np.array([0.5, 0.0, 0.5])
    nu = np.array([0.25, 0.25, 0.0, 0.5])
    r = ot.solve_ipot(M, mu, nu)
    assert np.all(r.plan[1] == 0) and np.all(r.plan[:, 2] == 0)
    assert r.cost == pytest.approx(ot.solve_exact(M, mu, nu).cost, rel=1e-5)


def test_ipot_with_exact_proximal_steps_is_monotone():
    # proximal point iterates decrease the objective when each step is solved
    # (nearly) exactly, hence many inner sweeps here
    rng = np.random.default_rng(9)
    s = ot.SolverSettings(ipot_beta=0.5, inner_iterations=300, outer_iterations=60)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        r = ot.solve_ipot(rng.random((n, n)), settings=s, record_history=True)
        assert np.all(np.diff(r.history) <= 1e-9)


def test_ipot_plain_domain_overflow_is_reported():
    # a step of 1e-3 (relative to max M) gives kernel entries near exp(-1000)
    M = np.array([[0.0, 1.0], [1.0, 0.9]])
    s = ot.SolverSettings(ipot_beta=1e-3, log_domain=False)
    with pytest.raises(SolverError, match="log_domain"):
        ot.solve_ipot(M, settings=s)


def test_ipot_large_costs_in_log_domain():
    rng = np.random.default_rng(10)
    M = 1e4 * rng.random((6, 6))
    r = ot.solve_ipot(M)
    assert r.cost == pytest.approx(ot.solve_exact(M).cost, rel=1e-5)


def test_settings_validation():
    with pytest.raises(InputError):
        ot.SolverSettings(ipot_beta=0.0)
    with pytest.raises(InputError):
        ot.SolverSettings(outer_iterations=0)
    with pytest.raises(InputError):
        ot.SolverSettings(method="emd")


# ---------------------------------------------------------------- small helpers


def test_transport_cost_values():
    M = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert ot.transport_cost(np.eye(2) / 2, M) == 0.0
    assert ot.transport_cost(np.full((2, 2), 0.25), M) == 1.0


def test_transport_cost_double_loop(rng):
    P, M = rng.random((4, 4)), rng.random((4, 4))
    expected = 0.0
    for i in range(4):
        for j in range(4):
            expected += P[i, j] * M[i, j]
    assert ot.transport_cost(P, M) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(InputError):
        ot.transport_cost(P, M[:3])


def test_trace_ratio():
    assert ot.plan_trace_ratio(np.eye(4) / 4) == 1.0
    assert ot.plan_trace_ratio(np.array([[0, 0.5], [0.5, 0]])) == 0.0
    assert ot.plan_trace_ratio(np.full((5, 5), 1 / 25)) == pytest.approx(1 / 5)
    with pytest.raises(InputError):
        ot.plan_trace_ratio(np.ones((2, 3)))


def test_round_to_feasible_is_feasible(rng):
    mu, nu = random_measure(rng, 4), random_measure(rng, 5)
    P = np.outer(mu, nu) * rng.uniform(0.8, 1.2, size=(4, 5))
    R = ot.round_to_feasible(P, mu, nu)
    assert np.all(R >= 0)
    np.testing.assert_allclose(R.sum(axis=1), mu, atol=1e-15)
    np.testing.assert_allclose(R.sum(axis=0), nu, atol=1e-15)


# ---------------------------------------------------------------- invariants


cost_matrices = st.integers(2, 5).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 1, allow_nan=False))
)


@settings(max_examples=40, deadline=None)
@given(M=cost_matrices, method=st.sampled_from(["sinkhorn", "ipot"]))
def test_solvers_feasible_and_not_below_exact(M, method):
    s = ot.SolverSettings(method=method, entropic_epsilon=0.05)
    r = ot.solve(M, settings=s)
    n = M.shape[0]
    assert np.all(r.plan >= 0)
    np.testing.assert_allclose(r.plan.sum(axis=1), np.full(n, 1 / n), atol=s.convergence_tolerance)
    np.testing.assert_allclose(r.plan.sum(axis=0), np.full(n, 1 / n), atol=s.convergence_tolerance)
    assert r.cost >= ot.solve_exact(M).cost - 1e-9
    assert r.cost == pytest.approx(ot.transport_cost(r.plan, M), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_exact_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    M = rng.random((4, 4))
    mu = random_measure(rng, 4)
    sigma = rng.permutation(4)
    a = ot.solve_exact(M, mu)
    b = ot.solve_exact(M[sigma], mu[sigma])
    assert b.cost == pytest.approx(a.cost, rel=1e-9, abs=1e-12)
    # generic costs have a unique optimum, so the plan itself is permuted
    np.testing.assert_allclose(b.plan, a.plan[sigma], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_exact_scale_covariance(seed, c):
    rng = np.random.default_rng(seed)
    M = rng.random((5, 5))
    a, b = ot.solve_exact(M), ot.solve_exact(c * M)
    assert b.cost == pytest.approx(c * a.cost, rel=1e-12)
    np.testing.assert_array_equal(a.plan, b.plan)
