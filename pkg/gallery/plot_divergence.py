"""
Why the direct multi-block extension can diverge
================================================

Three scalar blocks with zero objectives and a nonsingular coupling
matrix.  The only solution is x = 0, yet the sequential (Gauss-Seidel)
sweep drifts away from it.  Two repaired engines converge on the same
instance.
"""

import numpy as np

from mbadmm import SolverConfig, run_gauss_seidel, run_gbs, run_variable_splitting
from mbadmm.fixtures import DIVERGE3_START, diverge3

############################################################
# The fixture and its starting point

p = diverge3()
print("columns of A:", [A.ravel().tolist() for A in p.A])
print("start:", DIVERGE3_START)

############################################################
# Gauss-Seidel stops once the residual exceeds the divergence guard

tr, rep = run_gauss_seidel(p, SolverConfig(max_iter=5000), x0=DIVERGE3_START)
print(f"gauss-seidel: {rep.status.value} after {rep.iterations} iterations")
r = tr.column("primal_residual")
for k in (0, 100, 300, len(r) - 1):
    print(f"  k={k:4d}  |r|={r[k]:.3e}")

############################################################
# Gauss back substitution and variable splitting both recover x = 0

for name, run, cfg in [("gbs", run_gbs, SolverConfig(alpha=0.5)),
                       ("variable-splitting", run_variable_splitting, SolverConfig())]:
    _, rep = run(p, cfg, x0=DIVERGE3_START)
    print(f"{name}: {rep.status.value} in {rep.iterations} iterations, "
          f"max|x|={np.abs(rep.x.flat).max():.2e}")
