"""Critical coupling for the (4,2) pair by bisection on an unbounded witness.

Below a_c every trial potential keeps D(V) bounded; above it a Gaussian
witness drives D below zero.  The estimate is compared with the value
4 pi^2 ||phi||^2 implied by the positive soliton.
"""
from choquard.critical import critical_grid, estimate_ac, solve_barphi

grid = critical_grid(4, 2048)
for beta in ([1.0], [0.5, 0.5]):
    scan = estimate_ac(beta, grid=grid, n=4, alpha=2, bracket=(0.05, 4000.0), tol=2.0)
    print(f"k={len(beta)}: a_c in [{scan.bracket[0]:.1f}, {scan.bracket[1]:.1f}], "
          f"{len(scan.records)} probes, monotone verdicts: {scan.monotone()}")

bp = solve_barphi(critical_grid(4, 4096))
print(f"soliton: ||phi||_2 = {bp.norm2:.4f}, 4 pi^2 ||phi||^2 = {bp.a_c:.1f}, "
      f"residual {bp.residual:.1e} after {bp.iterations} iterations")
