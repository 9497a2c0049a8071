"""Empirical-likelihood weights for a small constraint matrix.

Solves the dual for the multiplier, prints the weights and the diagnostics,
and checks the a-priori multiplier bounds.

Run with ``python3 demos/el_weights.py``.
"""
import numpy as np

from elsem import el_core
from elsem.errors import NotInHull

rng = np.random.default_rng(1)
Z = rng.standard_normal((200, 2))
# rows whose mean is a small known offset from zero
U = Z - Z.mean(axis=0) + [0.02, -0.01]

sol = el_core.solve_dual(U)
print(f"multiplier zeta       : {np.array2string(sol.zeta, precision=5)}")
print(f"Newton iterations     : {sol.iterations}")
print(f"weights sum to        : {sol.weights.sum():.15f}")
print(f"weighted mean of rows : {el_core.weighted_mean(sol, U)}")
print(f"log EL ratio          : {sol.log_el_ratio:.5f}")

print("\ndiagnostics")
for key, value in sol.diagnostics.as_dict().items():
    print(f"  {key:>15}: {value}")

report = el_core.verify_lemma_bounds(sol, U)
print(f"\nbounds guaranteed here: {report.applicable}; all hold: {report.all_hold}")

try:
    el_core.solve_dual(np.abs(U) + 0.1)
except NotInHull as exc:
    print(f"\nall-positive rows are rejected: {exc}")
