"""Critical-coupling laboratory for the pairs ``(n, alpha) = (3, 1)`` and ``(4, 2)``.

On these pairs the quadratic form and the unconfined eigenvalues both scale
like ``delta**2`` under ``V_delta(x) = delta**2 V(delta x)``, so ``H`` is
bounded below exactly when no potential makes

    ``D(V) = (a/2) <V, V>_{alpha/2} + G0(V)``

negative, where ``G0`` sums ``beta_j lambda_j(-Delta - a V)`` over the negative
eigenvalues only.  :func:`estimate_ac` brackets the threshold coupling by
bisection on a witness search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, ndimage
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

from .errors import (
    DomainError,
    InvalidBracket,
    MassExceedsOne,
    NoDecayingSolution,
    SupportOverflow,
)
from .fracops import get_operator, hnorm, radial_stiffness, riesz_constant
from .model import ProblemSpec, RadialGrid, ScalarField
from .spectrum import assemble_hamiltonian, lowest_eigs

CRITICAL_PAIRS = ((3, 1.0), (4, 2.0))
WITNESS_THRESHOLD = -1e-6
SCAN_COLUMNS = ("a", "verdict", "best_D", "witness_id")
SCALING_COLUMNS = ("delta", "hnorm_ratio", "eig_ratio", "H_value")


def _check_pair(n, alpha):
    if (n, float(alpha)) not in CRITICAL_PAIRS:
        raise DomainError(f"(n, alpha) = ({n}, {alpha}) is not a critical pair")


def critical_grid(n: int, points: int = 4096, R: float = 20.0) -> RadialGrid:
    """Default radial grid for witness searches."""
    return RadialGrid(n, float(R), int(points))


def _support_radius(V: ScalarField, rel=1e-6) -> float:
    vals = np.abs(V.values)
    top = vals.max()
    if top == 0:
        return 0.0
    return float(V.grid.radius[vals > rel * top].max())


def scale_potential(V: ScalarField, delta: float) -> ScalarField:
    """``V_delta(x) = delta**2 V(delta x)`` resampled on the same grid.

    Raises
    ------
    SupportOverflow
        If the rescaled support leaves the domain, or ``V`` is not negligible
        at the domain edge while ``delta > 1`` samples beyond it.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    grid = V.grid
    rs = _support_radius(V)
    R = grid.R
    if rs > R * min(1.0, delta) + 1e-12:
        raise SupportOverflow(f"support radius {rs:.4g} does not fit after scaling by {delta}")
    if delta == 1.0:
        return ScalarField(grid, V.values.copy())
    if isinstance(grid, RadialGrid):
        r = grid.r
        rr = np.concatenate(([0.0], r))
        vv = np.concatenate(([V.values[0]], V.values))
        spline = CubicSpline(rr, vv, bc_type=((1, 0.0), "not-a-knot"))
        x = delta * r
        out = np.where(x <= r[-1], spline(np.minimum(x, r[-1])), 0.0)
        return ScalarField(grid, delta**2 * out)
    coords = [(delta * c + R) / grid.h for c in grid.coords()]
    out = ndimage.map_coordinates(V.values, coords, order=3, mode="constant", cval=0.0)
    return ScalarField(grid, delta**2 * out)


# ---------------------------------------------------------------- witness search


class _WitnessProblem:
    """``D(V)`` on a radial grid with the confinement dropped."""

    def __init__(self, grid: RadialGrid, alpha: float, beta, a: float):
        self.grid = grid
        self.alpha = float(alpha)
        self.beta = np.asarray(beta, dtype=float)
        self.a = float(a)
        self.op = get_operator(grid, self.alpha, "freespace")
        d, o = radial_stiffness(grid, "dirichlet")
        w = grid.weights
        self._d = d / w
        self._e = o / np.sqrt(w[:-1] * w[1:])

    def spectrum(self, V, with_states=False):
        k = self.beta.size
        d = self._d - self.a * V
        if with_states:
            vals, vecs = eigh_tridiagonal(d, self._e, select="i", select_range=(0, k - 1))
            return vals, vecs.T / np.sqrt(self.grid.weights)
        vals = eigh_tridiagonal(d, self._e, eigvals_only=True, select="i", select_range=(0, k - 1))
        return vals, None

    def value(self, V, source=None):
        vals, _ = self.spectrum(V)
        neg = np.minimum(vals, 0.0)
        return 0.5 * self.a * self.op.form(V, source) + float(self.beta @ neg)

    def refine(self, V, steps=50):
        """DC steps on ``D`` accepted only when ``D`` decreases."""
        src = self.op.laplacian(V)
        best = self.value(V, src)
        theta = 1.0
        for _ in range(steps):
            vals, states = self.spectrum(V, with_states=True)
            occ = self.beta * (vals < 0)
            if not occ.any():
                break
            rho = np.tensordot(occ, states**2, axes=1)
            vstar = self.op.riesz(rho)
            while theta > 1e-3:
                Vn = (1 - theta) * V + theta * vstar
                sn = (1 - theta) * src + theta * rho
                Dn = self.value(Vn, sn)
                if Dn < best:
                    V, src, best = Vn, sn, Dn
                    break
                theta *= 0.5
            else:
                break
        return V, best


@dataclass
class WitnessResult:
    """Outcome of :func:`unbounded_witness`."""

    a: float
    verdict: str
    best_D: float
    V: ScalarField | None = None
    witness_id: str = ""

    @property
    def found(self) -> bool:
        return self.verdict == "unbounded-witness"


def _gaussian_family(grid: RadialGrid, a: float, sizes=(20, 20), s_range=(0.5, 5e3)):
    nsig, namp = sizes
    sig = np.geomspace(8 * grid.h, grid.R / 8, nsig)
    strength = np.geomspace(*s_range, namp)
    r2 = grid.r**2
    for i, s in enumerate(sig):
        g = np.exp(-r2 / (2 * s * s))
        for j, q in enumerate(strength):
            yield f"gauss[{i},{j}]", (q / (a * s * s)) * g


def unbounded_witness(a: float, beta, spec: ProblemSpec | None = None, *, grid: RadialGrid | None = None,
                      n: int | None = None, alpha: float | None = None, family_sizes=(20, 20),
                      refine_steps: int = 50, threshold: float = WITNESS_THRESHOLD) -> WitnessResult:
    """Search for ``V`` with ``D(V) < threshold`` at coupling ``a``.

    The family is a log grid of Gaussians ``A exp(-r^2 / 2 sigma^2)``; the
    amplitude axis is parametrised by the dimensionless depth ``a A sigma^2``.
    The best member is then refined by monotone DC steps on ``D``.  The
    confinement of ``spec`` is ignored.
    """
    n, alpha, grid = _resolve(spec, grid, n, alpha)
    if a <= 0:
        return WitnessResult(a, "bounded-evidence", 0.0)
    prob = _WitnessProblem(grid, alpha, beta, a)
    best_id, best_V, best_D = "", None, math.inf
    seed_id, seed_V, seed_score = "", None, math.inf
    for wid, V in _gaussian_family(grid, a, family_sizes):
        q = prob.op.form(V)
        D = prob.value(V)
        if D < best_D:
            best_id, best_V, best_D = wid, V, D
        # D relative to its quadratic part is invariant under V -> V_delta, so
        # it ranks members by how close they are to a witness.
        score = D / (0.5 * a * q)
        if score < seed_score:
            seed_id, seed_V, seed_score = wid, V, score
    if best_D >= threshold and refine_steps:
        Vr, Dr = prob.refine(seed_V, refine_steps)
        if Dr < best_D:
            best_V, best_D, best_id = Vr, Dr, seed_id + "+refined"
    verdict = "unbounded-witness" if best_D < threshold else "bounded-evidence"
    return WitnessResult(a, verdict, float(best_D), ScalarField(grid, best_V), best_id)


def witness_value(V: ScalarField, a: float, beta, alpha: float) -> float:
    """``D(V)`` for a radial potential."""
    return _WitnessProblem(V.grid, alpha, beta, a).value(V.values)


def _resolve(spec, grid, n, alpha):
    if spec is not None:
        n = spec.n if n is None else n
        alpha = spec.alpha if alpha is None else alpha
        if grid is None:
            if spec.mode != "radial":
                raise DomainError("critical scans run on radial grids")
            g = spec.geometry
            grid = RadialGrid(spec.n, g.R, g.points, g.lmax, g.padding_factor)
    if n is None or alpha is None:
        raise ValueError("need a spec or explicit n and alpha")
    _check_pair(n, alpha)
    if grid is None:
        grid = critical_grid(n, 4096 if n == 4 else 2048)
    return n, float(alpha), grid


@dataclass
class CriticalScan:
    """Bisection record for the critical coupling.

    ``records`` rows follow ``SCAN_COLUMNS``.
    """

    n: int
    alpha: float
    beta: tuple
    records: list = field(default_factory=list)
    bracket: tuple = (math.nan, math.nan)
    witness: ScalarField | None = None
    scaling: list = field(default_factory=list)

    @property
    def a_c_est(self) -> float:
        return 0.5 * (self.bracket[0] + self.bracket[1])

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.bracket[1] - self.bracket[0])

    def monotone(self) -> bool:
        bounded = [r[0] for r in self.records if r[1] == "bounded-evidence"]
        unbounded = [r[0] for r in self.records if r[1] == "unbounded-witness"]
        return not bounded or not unbounded or max(bounded) < min(unbounded)


def estimate_ac(beta, spec: ProblemSpec | None = None, bracket=(0.05, 1000.0), tol: float = 1.0, *,
                rtol: float = 0.0, grid: RadialGrid | None = None, n: int | None = None,
                alpha: float | None = None, family_sizes=(20, 20), refine_steps: int = 50) -> CriticalScan:
    """Bisect on :func:`unbounded_witness` until the bracket width is at most ``max(tol, rtol * a)``.

    Raises
    ------
    InvalidBracket
        If the lower end is not bounded-evidence or the upper end has no witness.
    """
    n, alpha, grid = _resolve(spec, grid, n, alpha)
    lo, hi = map(float, bracket)
    if not 0 <= lo < hi:
        raise InvalidBracket(f"bad bracket {bracket}")
    scan = CriticalScan(n, alpha, tuple(float(b) for b in beta))

    def probe(a):
        res = unbounded_witness(a, beta, grid=grid, n=n, alpha=alpha, family_sizes=family_sizes,
                                refine_steps=refine_steps)
        scan.records.append((a, res.verdict, res.best_D, res.witness_id))
        return res

    if probe(lo).found:
        raise InvalidBracket(f"a witness already exists at the lower end a = {lo}")
    top = probe(hi)
    if not top.found:
        raise InvalidBracket(f"no witness found at the upper end a = {hi}")
    scan.witness = top.V
    while hi - lo > max(tol, rtol * hi):
        mid = 0.5 * (lo + hi)
        res = probe(mid)
        if res.found:
            hi, scan.witness = mid, res.V
        else:
            lo = mid
    scan.bracket = (lo, hi)
    return scan


def scaling_table(V: ScalarField, alpha: float, a: float, beta, deltas=(1.5, 2.0, 3.0), *,
                  spec: ProblemSpec | None = None):
    """Rows ``(delta, hnorm_ratio, eig_ratio, H_value)`` for ``V_delta``.

    ``eig_ratio`` compares the lowest eigenvalue of ``-Delta - a V_delta``
    (confinement dropped) with that of ``V``; ``H_value`` is ``D(V_delta)``.
    """
    beta = np.asarray(beta, dtype=float)

    def lam(U):
        op = assemble_hamiltonian(None, U, a)
        return lowest_eigs(op, 1).eigenvalues[0]

    def dval(U, q, lm):
        return 0.5 * a * q + beta[0] * min(lm, 0.0)

    q0, l0 = hnorm(V, alpha), lam(V)
    rows = [(1.0, 1.0, 1.0, dval(V, q0, l0))]
    for d in deltas:
        Vd = scale_potential(V, d)
        qd, ld = hnorm(Vd, alpha), lam(Vd)
        rows.append((float(d), qd / q0, ld / l0, dval(Vd, qd, ld)))
    return rows


# ---------------------------------------------------------------- inequalities


def hardy_ratio(f, grid: RadialGrid) -> float:
    """``int |grad f|^2 / [((n-2)/2)^2 int f^2 / r^2]`` for a radial profile."""
    d, o = radial_stiffness(grid, "dirichlet")
    f = np.asarray(f, dtype=float)
    grad = float(f @ (d * f) + 2 * np.dot(o * f[:-1], f[1:]))
    c = ((grid.n - 2) / 2) ** 2
    return grad / (c * grid.integrate(f * f / grid.r**2))


def hardy_family(grid: RadialGrid):
    """Truncated Gaussians, cut-off powers ``r^(-(n-2)/2 + eps)`` and log-window near-optimisers."""
    r, R = grid.r, grid.R
    out = {}
    for s in (0.05, 0.1, 0.25, 0.5, 1.0, 2.0):
        out[f"gauss s={s}"] = np.exp(-(r**2) / (2 * s * s)) * (r < R)
    rin, rout = 40 * grid.h, R / 4
    cut = (1 - np.exp(-((r / rin) ** 4))) * np.exp(-((r / rout) ** 4))
    p = (grid.n - 2) / 2
    for eps in (0.5, 0.25, 0.1, 0.05, 0.02):
        out[f"power eps={eps}"] = r ** (-p + eps) * cut
    # log-window profiles: exact ratio 1 + (pi / (p L))^2, approaching 1 as L grows
    for top in (R / 4, R / 2, R - 2 * grid.h):
        L = math.log(top / rin)
        t = np.log(np.clip(r, rin, top) / rin) / L
        out[f"logwindow L={L:.2f}"] = np.where((r > rin) & (r < top), np.sin(math.pi * t), 0.0) * r**-p
    return out


def hardy_check(family=None, n: int = 4, grid: RadialGrid | None = None) -> float:
    """Minimum Hardy ratio over ``family`` (a dict or list of radial profiles)."""
    if n < 3:
        raise DomainError("the Hardy inequality needs n >= 3")
    grid = grid if grid is not None else critical_grid(n, 4096)
    if family is None:
        family = hardy_family(grid)
    items = family.values() if isinstance(family, dict) else family
    return min(hardy_ratio(f, grid) for f in items)


def newton_potential(rho: ScalarField) -> ScalarField:
    """``U = I_2 * rho`` for a radial density (free-space closure)."""
    op = get_operator(rho.grid, 2.0, "freespace")
    return ScalarField(rho.grid, op.riesz(rho.values))


def newton_bound_ratio(rho: ScalarField) -> float:
    """``max_r U(r) r^(n-2) / (A(2, n) m)`` with ``m`` the total mass; at most 1."""
    grid = rho.grid
    m = grid.integrate(rho.values)
    if m > 1 + 1e-10:
        raise MassExceedsOne(f"mass {m:.6g} exceeds one")
    if m <= 0:
        return 0.0
    U = newton_potential(rho).values
    A = riesz_constant(2.0, grid.n)
    return float(np.max(U * grid.r ** (grid.n - 2)) / (A * m))


def newton_bound_check(rho: ScalarField, n: int = 4) -> bool:
    """Check ``U(r) <= A(2, n) m / r^(n-2)`` pointwise; ``A(2, 4) = 1/(4 pi^2)``."""
    if rho.grid.n != n:
        raise DomainError("density grid dimension does not match n")
    if np.any(rho.values < 0):
        raise DomainError("density must be nonnegative")
    return newton_bound_ratio(rho) <= 1.0 + 1e-12


# ---------------------------------------------------------------- ground state


@dataclass
class BarPhi:
    """Positive radial solution of ``-Delta phi - (|x|^-2 * phi^2) phi + phi = 0`` in R^4."""

    phi: ScalarField
    norm2: float
    residual: float
    iterations: int

    @property
    def a_c(self) -> float:
        """Threshold coupling implied by the solution, ``4 pi^2 ||phi||_2^2``."""
        return 4 * math.pi**2 * self.norm2**2


def solve_barphi(grid: RadialGrid | None = None, *, tol: float = 1e-11, max_iter: int = 2000) -> BarPhi:
    """Petviashvili iteration for the positive radial soliton on ``B_R`` with ``phi(R) = 0``.

    The nonlinearity uses the raw kernel ``|x|^-2 = 4 pi^2 I_2``.

    Raises
    ------
    NoDecayingSolution
        If the iteration does not converge to a positive decaying profile.
    """
    grid = grid if grid is not None else RadialGrid(4, 40.0, 8192)
    if grid.n != 4:
        raise DomainError("the soliton benchmark is four-dimensional")
    w, r = grid.weights, grid.r
    d, o = radial_stiffness(grid, "dirichlet")
    ab = np.zeros((3, grid.M))
    ab[0, 1:] = o
    ab[1] = d + w
    ab[2, :-1] = o
    newton = get_operator(grid, 2.0, "freespace")
    c = 4 * math.pi**2

    def L(phi):
        out = d * phi
        out[:-1] += o * phi[1:]
        out[1:] += o * phi[:-1]
        return out / w + phi

    def N(phi):
        return c * newton.riesz(phi * phi) * phi

    phi = 3.0 * np.exp(-(r**2) / 2)
    res = math.inf
    for it in range(1, max_iter + 1):
        Nphi = N(phi)
        num = grid.inner(phi, L(phi))
        den = grid.inner(phi, Nphi)
        if den <= 0:
            raise NoDecayingSolution("nonlinear term vanished")
        ms = num / den
        new = ms**1.5 * linalg.solve_banded((1, 1), ab, w * Nphi)
        res = grid.norm(L(new) - N(new)) / grid.norm(L(new))
        phi = new
        if res <= tol:
            break
    if not res <= 1e-5 or not np.all(phi > 0) or phi[-1] > 1e-8 * phi[0]:
        raise NoDecayingSolution(f"no positive decaying solution (residual {res:.3g})")
    return BarPhi(ScalarField(grid, phi), grid.norm(phi), float(res), it)
