import math

import numpy as np
import pytest

from choquard.critical import (
    critical_grid, estimate_ac, hardy_check, hardy_ratio, newton_bound_check, newton_bound_ratio, newton_potential,
    scale_potential, scaling_table, solve_barphi, unbounded_witness, witness_value,
)
from choquard.errors import DomainError, InvalidBracket, MassExceedsOne, SupportOverflow
from choquard.model import RadialGrid, ScalarField


@pytest.fixture(scope="module")
def grid4():
    return critical_grid(4, 1024)


def test_scale_potential_radial(grid4):
    r = grid4.r
    V = ScalarField(grid4, np.exp(-r**2))
    Vd = scale_potential(V, 2.0)
    inner = r < 3
    # cubic spline at h = 0.02 on a profile of width 0.5
    np.testing.assert_allclose(Vd.values[inner], 4 * np.exp(-4 * r[inner] ** 2), atol=5e-4)
    with pytest.raises(SupportOverflow):
        scale_potential(ScalarField(grid4, np.ones_like(r)), 0.5)
    with pytest.raises(DomainError):
        scale_potential(V, -1.0)


def test_scaling_table_radial_pair(grid4):
    V = ScalarField(grid4, 30.0 * np.exp(-grid4.r**2 / 2))
    rows = scaling_table(V, 2.0, 1.0, [1.0], deltas=(1.5, 2.0))
    for d, qr, er, _ in rows[1:]:
        assert math.isclose(qr, d * d, rel_tol=1e-2)
        assert math.isclose(er, d * d, rel_tol=1e-2)


def test_witness_below_and_above_threshold(grid4):
    low = unbounded_witness(50.0, [1.0], grid=grid4, n=4, alpha=2.0)
    assert low.verdict == "bounded-evidence"
    assert low.best_D >= -1e-6
    high = unbounded_witness(1500.0, [1.0], grid=grid4, n=4, alpha=2.0)
    assert high.found
    assert witness_value(high.V, 1500.0, [1.0], 2.0) < 0
    # D is scale invariant up to delta^2
    Vd = scale_potential(high.V, 1.5)
    assert witness_value(Vd, 1500.0, [1.0], 2.0) < 0


def test_witness_rejects_noncritical_pair():
    with pytest.raises(DomainError):
        unbounded_witness(10.0, [1.0], grid=RadialGrid(3, 10.0, 100), n=3, alpha=2.0)


def test_estimate_ac_brackets(grid4):
    with pytest.raises(InvalidBracket):
        estimate_ac([1.0], bracket=(0.05, 20.0), grid=grid4, n=4, alpha=2.0)
    with pytest.raises(InvalidBracket):
        estimate_ac([1.0], bracket=(5000.0, 6000.0), grid=grid4, n=4, alpha=2.0)
    scan = estimate_ac([1.0], bracket=(0.05, 1000.0), tol=20.0, grid=grid4, n=4, alpha=2.0)
    lo, hi = scan.bracket
    assert hi - lo <= 20.0
    assert scan.monotone()
    # Hardy: no witness below 8 pi^2
    assert hi >= 8 * math.pi**2
    assert 200 < scan.a_c_est < 400
    # the soliton predicts the same threshold
    bp = solve_barphi(RadialGrid(4, 40.0, 2048))
    assert abs(bp.a_c / scan.a_c_est - 1) < 0.1


def test_hardy(grid4):
    assert hardy_check(grid=grid4) >= 0.995
    r = grid4.r
    # r^-1 sin(pi log(r / r0) / L) on [r0, r0 e^L] has ratio 1 + (pi / L)^2 in R^4
    r0, r1 = 0.2, 19.9
    L = math.log(r1 / r0)
    inside = (r > r0) & (r < r1)
    f = np.where(inside, np.sin(math.pi * np.log(np.clip(r, r0, r1) / r0) / L) / r, 0.0)
    assert math.isclose(hardy_ratio(f, grid4), 1 + (math.pi / L) ** 2, rel_tol=5e-3)
    with pytest.raises(DomainError):
        hardy_check(n=2)


def test_newton_bound(grid4):
    r = grid4.r
    for s in (0.2, 1.0, 3.0):
        rho = np.exp(-r**2 / (2 * s * s))
        rho /= grid4.integrate(rho)
        rf = ScalarField(grid4, rho, "density")
        assert newton_bound_check(rf)
        assert newton_bound_ratio(rf) > 0.9
    with pytest.raises(MassExceedsOne):
        newton_bound_ratio(ScalarField(grid4, 2 * rho, "density"))
    assert newton_bound_ratio(ScalarField(grid4, np.zeros_like(r), "density")) == 0.0


def test_newton_thin_shell_is_sharp(grid4):
    # outside a shell of unit mass U(r) = A(2, 4) / r^2 exactly
    r = grid4.r
    rho = np.where(np.abs(r - 1.0) < 0.05, 1.0, 0.0)
    rho /= grid4.integrate(rho)
    U = newton_potential(ScalarField(grid4, rho, "density")).values
    outside = (r > 1.2) & (r < 15)
    np.testing.assert_allclose(U[outside] * r[outside] ** 2, 1 / (4 * math.pi**2), rtol=1e-3)
    assert newton_bound_check(ScalarField(grid4, rho, "density"))


def test_barphi():
    bp = solve_barphi(RadialGrid(4, 40.0, 4096))
    assert bp.residual <= 1e-9
    assert np.all(bp.phi.values > 0)
    assert np.all(np.diff(bp.phi.values) < 0)
    # frozen value of the L2 norm of the soliton
    assert math.isclose(bp.norm2, 2.7740, rel_tol=2e-4)
    assert math.isclose(bp.a_c, 4 * math.pi**2 * bp.norm2**2)
