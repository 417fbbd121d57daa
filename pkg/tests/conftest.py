import itertools

import numpy as np
import pytest


def brute_force_ot(M):
    """Optimal cost over scaled permutation matrices (square, uniform marginals).

    Birkhoff: these are the vertices of the transport polytope, so the
    minimum over them is the exact optimum.
    """
    M = np.asarray(M)
    n = M.shape[0]
    assert n <= 7, "permutation oracle is exponential"
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        c = sum(M[i, perm[i]] for i in range(n)) / n
        if c < best:
            best, best_perm = c, perm
    return best, best_perm


def finite_difference(f, x, step=1e-5):
    """Central differences of a scalar function of an array, entry by entry."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        fp = f(x)
        x[idx] = old - step
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
