"""Hardy, Newton and Lieb-Thirring checks on radial test functions."""
import numpy as np

from choquard.critical import critical_grid, hardy_check, newton_bound_ratio
from choquard.model import RadialGrid, ScalarField
from choquard.spectrum import lieb_thirring_ratio

grid = critical_grid(4, 4096)
print(f"Hardy: min ratio over the test family = {hardy_check(grid=grid):.4f} (bound 1)")

r = grid.r
# U r^2 tends to m A outside the support, so the maximum sits at 1.
for s in (0.5, 1.0, 4.0):
    rho = np.exp(-r**2 / (2 * s * s))
    rho /= grid.integrate(rho)
    print(f"Newton: Gaussian width {s}: max U r^2 / (m A) = {newton_bound_ratio(ScalarField(grid, rho)):.4f}")

g3 = RadialGrid(3, 20.0, 2000)
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(10):
    depth, width = rng.uniform(2, 20), rng.uniform(0.5, 3)
    V = ScalarField(g3, depth * np.exp(-g3.r**2 / (2 * width**2)))
    worst = max(worst, lieb_thirring_ratio(V, 1.0).ratio)
print(f"Lieb-Thirring (gamma=1, n=3): worst ratio over 10 wells = {worst:.4f}")
