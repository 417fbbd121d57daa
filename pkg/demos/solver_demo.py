"""Compare the three OT solvers on one random problem.

    python3 demos/solver_demo.py
"""

import time

import numpy as np

from otrep import ot

rng = np.random.default_rng(0)
M = rng.random((6, 9))
mu = rng.integers(1, 5, size=6).astype(float)
mu /= mu.sum()
nu = ot.uniform(9)

exact = ot.solve_exact(M, mu, nu)
print(f"exact    cost {exact.cost:.10f}")

for settings in (ot.SolverSettings(method="ipot"),
                 ot.SolverSettings(method="sinkhorn", entropic_epsilon=0.05),
                 ot.SolverSettings(method="sinkhorn", entropic_epsilon=0.01)):
    start = time.perf_counter()
    r = ot.solve(M, mu, nu, settings)
    label = settings.method if settings.method == "ipot" else f"sinkhorn eps={settings.entropic_epsilon:g}"
    print(f"{label:22s} cost {r.cost:.10f}  gap {r.cost - exact.cost:+.2e}  "
          f"violation {r.final_marginal_violation:.1e}  iters {r.iterations_used}  "
          f"{1e3 * (time.perf_counter() - start):.1f} ms")

# a permutation cost has a zero-cost plan on the matching
sigma = rng.permutation(5)
P = np.abs(np.arange(5)[:, None] - sigma[None, :]).astype(float)
r = ot.solve_exact(P)
print("recovered permutation:", np.argmax(r.plan, axis=1), "expected:", np.argsort(sigma))
