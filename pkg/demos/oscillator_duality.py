"""Two states in a harmonic trap: dual and primal solvers meet at the same point.

Runs the monotone dual iteration, then the Stiefel descent from the bare
eigenstates, and compares H(V*) with twice the primal energy.
"""
import warnings

import numpy as np

from choquard.dualsolve import solve_dual
from choquard.errors import DegenerateCrossingAtK
from choquard.model import Confinement, GridSpec, ProblemSpec
from choquard.primal import stiefel_descent

# The p-shell of the oscillator is threefold degenerate, so k=2 sits on a crossing.
warnings.simplefilter("ignore", DegenerateCrossingAtK)

spec = ProblemSpec(n=3, alpha=2, k=2, beta=(0.7, 0.3), a=1.0,
                   confinement=Confinement("power", exponent=2.0), geometry=GridSpec(8.0, 32))

dual = solve_dual(spec)
print(f"dual:   status={dual.status}  iterations={dual.iterations}  H={dual.H:.10f}")
print(f"        EL residual {dual.el_residual:.2e}, theta {dual.theta}")
H = dual.column("H")
print(f"        H never increased: {bool(np.all(np.diff(H) <= 1e-12))}")

primal = stiefel_descent(spec)
print(f"primal: status={primal.status}  E={primal.E:.10f}  |grad|={primal.gradnorm:.2e}")
print(f"gap |H - 2E| = {abs(dual.H - 2 * primal.E):.2e}")
