import math

import numpy as np
import pytest
from scipy import integrate, special

from choquard.errors import DomainError, SupportViolation, UnsupportedRadialFractional
from choquard.fracops import (
    FracOperator, dirichlet_green_apply, frac_laplacian, get_operator, hnorm, lattice_origin_weight,
    radial_stiffness, riesz_constant, riesz_convolve, spectral_multiplier,
)
from choquard.model import CartesianGrid, RadialGrid, ScalarField


def gauss_density(grid, s=1.0):
    r = grid.radius
    return np.exp(-r**2 / (2 * s * s)) / (2 * math.pi * s * s) ** 1.5


def poisson_exact(r):
    r = np.maximum(r, 1e-300)
    out = special.erf(r / math.sqrt(2)) / (4 * math.pi * r)
    return np.where(r < 1e-8, 1 / (4 * math.pi) * math.sqrt(2 / math.pi), out)


@pytest.mark.parametrize("alpha, n, expected", [
    (2.0, 3, 1 / (4 * math.pi)),
    (2.0, 4, 1 / (4 * math.pi**2)),
    (1.0, 3, 1 / (2 * math.pi**2)),
])
def test_riesz_constant(alpha, n, expected):
    assert math.isclose(riesz_constant(alpha, n), expected, rel_tol=1e-14)


def test_lattice_origin_weight_frozen():
    # origin weights of the 1/|x| (alpha = 2) and 1/|x|^2 (alpha = 1) kernels
    assert math.isclose(lattice_origin_weight(2.0), 2.8372974794806, rel_tol=1e-9)
    assert math.isclose(lattice_origin_weight(1.0), 8.9136329242, rel_tol=1e-9)


def test_spectral_multiplier_on_periodic_mode():
    N, L = 16, 2 * math.pi
    h = L / N
    x = h * np.arange(N)
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    u = np.cos(2 * X) * np.sin(Y)
    out = spectral_multiplier(u, h, 1.0)
    np.testing.assert_allclose(out, math.sqrt(5) * u, atol=1e-12)
    back = spectral_multiplier(out, h, 1.0, inverse=True)
    np.testing.assert_allclose(back, u, atol=1e-12)


def test_poisson_erf_solution_cartesian():
    g = CartesianGrid(8.0, 48)
    V = riesz_convolve(ScalarField(g, gauss_density(g), "density"), 2.0)
    exact = poisson_exact(g.radius)
    inner = g.radius < 6
    err = np.max(np.abs(V.values - exact)[inner]) / exact.max()
    assert err <= 1e-3


@pytest.mark.parametrize("alpha", [2.0, 1.0])
def test_freespace_pair_is_exact_inverse(alpha):
    g = CartesianGrid(6.0, 24)
    op = FracOperator(g, alpha)
    rho = gauss_density(g, 0.8)
    V = op.riesz(rho)
    back = op.laplacian(V)
    assert np.max(np.abs(back - rho)) <= 1e-8 * rho.max()


def test_freespace_kernel_is_symmetric_positive():
    g = CartesianGrid(4.0, 12)
    op = FracOperator(g, 2.0)
    rng = np.random.default_rng(1)
    f, u = rng.standard_normal((2,) + g.shape)
    assert math.isclose(g.inner(op.riesz(f), u), g.inner(f, op.riesz(u)), rel_tol=1e-10)
    assert g.inner(op.riesz(f), f) > 0


def test_hnorm_scaling_cartesian():
    g = CartesianGrid(8.0, 32)
    r2 = g.radius**2
    for alpha in (1.0, 2.0):
        q1 = hnorm(ScalarField(g, np.exp(-r2 / 2)), alpha)
        q2 = hnorm(ScalarField(g, np.exp(-r2 / 8)), alpha)
        # ||f(x/2)||^2 = 2^(3 - alpha) ||f||^2
        assert math.isclose(q2 / q1, 2 ** (3 - alpha), rel_tol=1e-3)


def test_frac_laplacian_gaussian_alpha2():
    g = CartesianGrid(8.0, 48)
    r2 = g.radius**2
    V = ScalarField(g, np.exp(-r2 / 2))
    exact = (3 - r2) * np.exp(-r2 / 2)
    out = frac_laplacian(V, 2.0).values
    assert np.max(np.abs(out - exact)) < 1e-6


def test_radial_newton_potential_second_order():
    errs = []
    for M in (200, 400, 800):
        g = RadialGrid(3, 10.0, M)
        V = riesz_convolve(ScalarField(g, gauss_density(g), "density"), 2.0)
        errs.append(np.max(np.abs(V.values - poisson_exact(g.r))))
    assert errs[-1] < 1e-5
    assert 3.0 < errs[0] / errs[1] < 5.0
    assert 3.0 < errs[1] / errs[2] < 5.0


def _riesz1_exact(r):
    rho = lambda s: math.exp(-s * s / 2) / (2 * math.pi) ** 1.5

    def f(s):
        return s * rho(s) * math.log((r + s) / abs(r - s)) if s != r else 0.0

    val = integrate.quad(f, 0, r, limit=200)[0] + integrate.quad(f, r, 12, limit=200)[0]
    return val / (math.pi * r)


def test_radial_log_kernel_converges():
    probe = [0.5, 1.0, 2.0, 4.0]
    exact = np.array([_riesz1_exact(r) for r in probe])
    errs = []
    for M in (256, 512):
        g = RadialGrid(3, 12.0, M)
        V = get_operator(g, 1.0).riesz(gauss_density(g))
        errs.append(np.max(np.abs(np.interp(probe, g.r, V) - exact)) / exact.max())
    assert errs[1] < 5e-4
    assert errs[0] / errs[1] > 3.0


def test_radial_log_pair_inverse_and_positive():
    g = RadialGrid(3, 8.0, 256)
    op = get_operator(g, 1.0)
    rho = gauss_density(g)
    V = op.riesz(rho)
    np.testing.assert_allclose(op.laplacian(V), rho, atol=1e-9 * rho.max())
    assert np.all(np.linalg.eigvalsh(op._B) > 0)


def test_radial_fractional_laplacian_rejected():
    g = RadialGrid(3, 8.0, 64)
    with pytest.raises(UnsupportedRadialFractional):
        frac_laplacian(ScalarField(g, np.ones(64)), 1.0)
    with pytest.raises(UnsupportedRadialFractional):
        FracOperator(RadialGrid(4, 8.0, 64), 1.5)


def test_dirichlet_ball_poisson():
    # -Delta V = 1 in B_R, V = 0 on the sphere: V = (R^2 - r^2) / 6 in 3D
    g = RadialGrid(3, 2.0, 400)
    V = dirichlet_green_apply(ScalarField(g, np.ones(400), "density")).values
    assert np.max(np.abs(V - (4 - g.r**2) / 6)) < 1e-5
    g2 = RadialGrid(3, 4.0, 400)
    rho = np.ones(400)
    with pytest.raises(SupportViolation):
        dirichlet_green_apply(ScalarField(g2, rho, "density"), R=2.0)
    with pytest.raises(DomainError):
        FracOperator(g, 1.0, "dirichlet")


def test_dirichlet_ball_cartesian():
    g = CartesianGrid(2.5, 40)
    R = 2.0
    rho = np.where(g.radius < R, 1.0, 0.0)
    V = dirichlet_green_apply(ScalarField(g, rho, "density"), R=R).values
    inner = g.radius < 1.0
    exact = (R * R - g.radius**2) / 6
    # the voxelised sphere is only first-order accurate
    assert np.max(np.abs(V - exact)[inner]) < 0.05 * exact.max()


def test_radial_stiffness_is_symmetric_tridiagonal():
    g = RadialGrid(4, 5.0, 50)
    d, o = radial_stiffness(g, "dirichlet")
    assert d.shape == (50,) and o.shape == (49,)
    assert np.all(d > 0) and np.all(o < 0)
