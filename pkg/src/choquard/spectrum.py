"""Lowest eigenpairs of ``L = -Delta + W - a V`` and the concave spectral functional.

``G(V) = sum_j beta_j lambda_j(L^W - a V)`` is evaluated from the ``k`` lowest
eigenvalues; its supergradient is ``-a rho`` with the occupation density
``rho = sum_j beta_j |phi_j|^2``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import fft, linalg
from scipy.linalg import eigh_tridiagonal
from scipy.sparse import diags
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import (
    DegenerateCrossingAtK,
    GridMismatch,
    LengthMismatch,
    NoConvergence,
    TooManyBoundStates,
)
from .fracops import laplacian_matrix, radial_stiffness
from .model import CartesianGrid, ProblemSpec, RadialGrid, ScalarField, eval_confinement

DEG_TOL = 1e-8


def angular_degeneracy(n: int, l: int) -> int:
    """Dimension of the degree-``l`` spherical harmonics on ``S^(n-1)``."""
    top = math.comb(l + n - 1, n - 1)
    low = math.comb(l + n - 3, n - 1) if l >= 2 else 0
    return top - low


def centrifugal_term(n: int, l: int, r):
    """Effective potential of the reduced radial equation for ``u = r**((n-1)/2) R``.

    ``[(n-1)(n-3)/4 + l(l+n-2)] / r**2``.
    """
    r = np.asarray(r, dtype=float)
    return ((n - 1) * (n - 3) / 4 + l * (l + n - 2)) / r**2


class Hamiltonian:
    """Discrete ``-Delta_h + U`` with ``U = W - a V`` and zero Dirichlet data on the domain boundary."""

    def __init__(self, grid, potential):
        self.grid = grid
        self.potential = np.asarray(potential, dtype=float)
        if self.potential.shape != grid.shape:
            raise GridMismatch("potential does not match the grid")

    @property
    def is_radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    @cached_property
    def matrix(self):
        if self.is_radial:
            raise TypeError("radial Hamiltonians are stored per angular channel")
        return (laplacian_matrix(self.grid) + diags(self.potential.ravel())).tocsr()

    @cached_property
    def _stiff(self):
        return radial_stiffness(self.grid, "dirichlet")

    def channel(self, l: int = 0):
        """Symmetric tridiagonal ``(d, e)`` of channel ``l`` acting on ``sqrt(w) * phi``."""
        g = self.grid
        d, o = self._stiff
        w = g.weights
        dd = d / w + self.potential
        if l:
            dd = dd + l * (l + g.n - 2) / g.r**2
        return dd, o / np.sqrt(w[:-1] * w[1:])

    def kinetic_apply(self, phi):
        """``-Delta_h phi`` for a single state or a stack of states."""
        phi = np.asarray(phi, dtype=float)
        if self.is_radial:
            d, o = self._stiff
            out = d * phi
            out[..., :-1] += o * phi[..., 1:]
            out[..., 1:] += o * phi[..., :-1]
            return out / self.grid.weights
        lap = laplacian_matrix(self.grid)
        flat = phi.reshape(-1, self.grid.size)
        out = (lap @ flat.T).T
        return out.reshape(phi.shape)

    def apply(self, phi):
        return self.kinetic_apply(phi) + self.potential * phi

    def kinetic_form(self, phi) -> float:
        return self.grid.inner(phi, self.kinetic_apply(phi))

    def preconditioner(self, shift: float):
        """Return ``x -> (-Delta_h + shift)^(-1) x``, self-adjoint in the grid inner product."""
        if self.is_radial:
            d, o = self._stiff
            w = self.grid.weights
            ab = np.zeros((3, d.size))
            ab[0, 1:] = o
            ab[1] = d + shift * w
            ab[2, :-1] = o

            def solve(x):
                x = np.asarray(x, dtype=float)
                if x.ndim == 1:
                    return linalg.solve_banded((1, 1), ab, w * x)
                return linalg.solve_banded((1, 1), ab, (w * x).T).T

            return solve
        N, h = self.grid.N, self.grid.h
        lam1 = (2 - 2 * np.cos(np.pi * np.arange(1, N + 1) / (N + 1))) / h**2
        denom = lam1[:, None, None] + lam1[None, :, None] + lam1[None, None, :] + shift
        axes = (-3, -2, -1)

        def solve(x):
            X = fft.dstn(np.asarray(x, dtype=float), type=1, axes=axes)
            return fft.idstn(X / denom, type=1, axes=axes)

        return solve


def assemble_hamiltonian(W: ScalarField | None, V: ScalarField | None, a: float, grid=None) -> Hamiltonian:
    """Assemble ``L^W - a V``.  Either field may be None (treated as zero)."""
    fields = [f for f in (W, V) if f is not None]
    if fields:
        grid = fields[0].grid
        for f in fields[1:]:
            if f.grid is not grid:
                raise GridMismatch("W and V live on different grids")
    if grid is None:
        raise ValueError("a grid is required when both W and V are omitted")
    U = np.zeros(grid.shape)
    if W is not None:
        U = U + W.values
    if V is not None and a:
        U = U - a * V.values
    return Hamiltonian(grid, U)


@dataclass(eq=False)
class OrbitalFrame:
    """Orthonormal eigenstates with their eigenvalues.

    Attributes
    ----------
    states : ndarray, shape (k, *grid.shape)
        Grid-orthonormal states (radial profiles on radial grids).
    eigenvalues : ndarray, shape (k,)
    labels : list of (l, nodes) or None
        Angular channel and radial node count on radial grids.
    residuals : ndarray
        ``||L phi - lambda phi||`` per state.
    degenerate_at_k : bool
        Whether ``lambda_k`` and ``lambda_{k+1}`` coincide within tolerance.
    next_eigenvalue : float
        The first eigenvalue above the frame, or NaN when unknown.
    """

    grid: object
    states: np.ndarray
    eigenvalues: np.ndarray
    labels: list | None = None
    residuals: np.ndarray | None = None
    degenerate_at_k: bool = False
    next_eigenvalue: float = math.nan
    extra: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def density(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.size != self.k:
            raise LengthMismatch(f"{beta.size} weights for {self.k} states")
        return np.tensordot(beta, self.states**2, axes=1)

    def gram(self) -> np.ndarray:
        k = self.k
        flat = self.states.reshape(k, -1)
        if isinstance(self.grid, RadialGrid):
            return (flat * self.grid.weights) @ flat.T
        return self.grid.cell_volume * (flat @ flat.T)

    def orthonormality_defect(self) -> float:
        return float(np.abs(self.gram() - np.eye(self.k)).max())


def _tie_break(grid: CartesianGrid, vecs: np.ndarray) -> np.ndarray:
    # Diagonalise x^2 + 2y^2 + 3z^2 (plus a small odd part) within a degenerate cluster.
    X, Y, Z = grid.coords()
    q = (X * X + 2 * Y * Y + 3 * Z * Z + 1e-3 * (X + 2 * Y + 3 * Z)).ravel()
    Q = (vecs * q) @ vecs.T
    _, U = np.linalg.eigh(0.5 * (Q + Q.T))
    return U.T @ vecs


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    # Positive overlap with a fixed, strictly positive, generic weight.  A
    # generic weight is needed because symmetric states tie on their largest
    # samples and are orthogonal to any symmetric weight.
    w = 1.0 + 0.5 * np.random.default_rng(20240229).random(vecs.shape[1])
    s = np.sign(vecs @ w)
    s[s == 0] = 1.0
    return vecs * s[:, None]


def _clusters(vals, tol):
    groups, start = [], 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or abs(vals[i] - vals[i - 1]) > tol * max(1.0, abs(vals[i])):
            groups.append((start, i))
            start = i
    return groups


def _cartesian_eigs(op: Hamiltonian, k, tol, v0, seed, deg_tol, guard):
    grid = op.grid
    A = op.matrix
    size = grid.size
    if v0 is None:
        v0 = np.random.default_rng(seed).standard_normal(size)
    else:
        v0 = np.asarray(v0, dtype=float).ravel()
        if not np.any(v0):
            v0 = np.random.default_rng(seed).standard_normal(size)
    m = min(k + guard, size - 2)
    while True:
        try:
            vals, vecs = eigsh(A, k=m, which="SA", tol=tol, v0=v0, ncv=min(size - 1, max(2 * m + 1, 24)),
                               maxiter=20 * size)
        except ArpackNoConvergence as exc:
            raise NoConvergence(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order].T
        groups = _clusters(vals, deg_tol)
        last = next(g for g in groups if g[0] <= k - 1 < g[1])
        if last[1] < m or m >= size - 2:
            break
        m = min(m + guard + 2, size - 2)
    for s, e in groups:
        if s >= last[1]:
            break
        if e - s > 1:
            vecs[s:e] = _tie_break(grid, vecs[s:e])
    vecs = _fix_sign(vecs)
    res = np.linalg.norm((A @ vecs.T).T - vals[:, None] * vecs, axis=1)
    degenerate = last[1] > k
    if degenerate:
        warnings.warn(f"eigenvalue {k} is degenerate with eigenvalue {k + 1}", DegenerateCrossingAtK, stacklevel=3)
    states = vecs[:k].reshape((k,) + grid.shape) / math.sqrt(grid.cell_volume)
    return OrbitalFrame(grid, states, vals[:k].copy(), None, res[:k], degenerate,
                        float(vals[k]) if m > k else math.nan)


def _channel_eigs(op: Hamiltonian, l: int, count: int):
    d, e = op.channel(l)
    count = min(count, d.size)
    vals, vecs = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
    u = vecs.T
    u = _fix_sign(u)
    Tu = d * u
    Tu[:, :-1] += e * u[:, 1:]
    Tu[:, 1:] += e * u[:, :-1]
    res = np.linalg.norm(Tu - vals[:, None] * u, axis=1)
    return vals, u / np.sqrt(op.grid.weights), res


def _radial_eigs(op: Hamiltonian, k, sector, deg_tol):
    grid = op.grid
    if sector == "s":
        vals, states, res = _channel_eigs(op, 0, k + 1)
        labels = [(0, j) for j in range(k)]
        nxt = float(vals[k]) if vals.size > k else math.nan
        return OrbitalFrame(grid, states[:k], vals[:k], labels, res[:k], False, nxt)
    entries = []
    for l in range(grid.lmax + 1):
        vals, states, res = _channel_eigs(op, l, k + 1)
        g = angular_degeneracy(grid.n, l)
        for j in range(vals.size):
            for _ in range(g):
                entries.append((vals[j], l, j, states[j], res[j]))
    entries.sort(key=lambda t: (t[0], t[1], t[2]))
    sel = entries[:k]
    vals = np.array([t[0] for t in sel])
    nxt = entries[k][0] if len(entries) > k else math.nan
    degenerate = math.isfinite(nxt) and abs(nxt - vals[-1]) <= deg_tol * max(1.0, abs(nxt))
    return OrbitalFrame(grid, np.array([t[3] for t in sel]), vals, [(t[1], t[2]) for t in sel],
                        np.array([t[4] for t in sel]), degenerate, float(nxt))


def lowest_eigs(op: Hamiltonian, k: int, *, sector: str = "s", tol: float = 1e-12, v0=None, seed: int = 0,
                deg_tol: float = DEG_TOL, guard: int = 3) -> OrbitalFrame:
    """The ``k`` lowest eigenpairs of ``op`` in ascending order.

    Cartesian grids use implicitly restarted Lanczos seeded with ``v0`` (or a
    seeded random vector).  Degenerate clusters are rotated to diagonalise a
    fixed anisotropic quadratic so the basis is reproducible, and every state
    has a positive overlap with a fixed positive weight.  Radial grids solve the
    ``l = 0`` channel (``sector="s"``) or merge channels ``0..lmax`` with their
    angular multiplicities (``sector="full"``).
    """
    if k < 1:
        raise ValueError("k must be positive")
    if op.is_radial:
        return _radial_eigs(op, k, sector, deg_tol)
    return _cartesian_eigs(op, k, tol, v0, seed, deg_tol, guard)


# ---------------------------------------------------------------- spectral functional


def frame_for(V: ScalarField, spec: ProblemSpec, *, v0=None, seed: int = 0, W: ScalarField | None = None,
              k: int | None = None) -> OrbitalFrame:
    """Lowest ``k`` states of ``L^W - a V`` for the problem ``spec``."""
    if W is None:
        W = eval_confinement(spec, V.grid)
    op = assemble_hamiltonian(W, V, spec.a)
    return lowest_eigs(op, spec.k if k is None else k, v0=v0, seed=seed)


def g_value(V: ScalarField, spec: ProblemSpec) -> float:
    """``G(V) = sum_j beta_j lambda_j(L^W - a V)``."""
    frame = frame_for(V, spec)
    return float(np.dot(spec.beta, frame.eigenvalues))


def g_supergradient(V: ScalarField, spec: ProblemSpec, frame: OrbitalFrame | None = None) -> ScalarField:
    """Occupation density ``rho = sum_j beta_j |phi_j|^2``; the supergradient of G is ``-a rho``."""
    if frame is None:
        frame = frame_for(V, spec)
    rho = frame.density(spec.beta)
    mass = V.grid.integrate(rho)
    if abs(mass - sum(spec.beta)) > 1e-8:
        raise ValueError(f"density mass {mass} differs from sum(beta)")
    return ScalarField(V.grid, rho, role="density")


def rearrangement_check(beta, lam):
    """Brute-force the permutation minimising ``sum_j beta_pi(j) lam_j``.

    Returns ``(perm, value)``; ties resolve to the lexicographically first
    permutation, so sorted ``lam`` with decreasing ``beta`` gives the identity.
    """
    beta = np.asarray(beta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if beta.size != lam.size:
        raise LengthMismatch(f"{beta.size} weights for {lam.size} eigenvalues")
    best, best_val = None, math.inf
    for perm in itertools.permutations(range(beta.size)):
        val = float(np.dot(beta[list(perm)], lam))
        if val < best_val:
            best, best_val = perm, val
    return tuple(best), best_val


def concavity_probe(V1: ScalarField, V2: ScalarField, spec: ProblemSpec, m_samples: int = 1) -> float:
    """``min_t [G(tV1 + (1-t)V2) - t G(V1) - (1-t) G(V2)]`` over ``m_samples`` interior ``t``."""
    if V1.grid is not V2.grid:
        raise GridMismatch("potentials live on different grids")
    g1, g2 = g_value(V1, spec), g_value(V2, spec)
    out = math.inf
    for i in range(1, m_samples + 1):
        t = i / (m_samples + 1)
        Vt = ScalarField(V1.grid, t * V1.values + (1 - t) * V2.values)
        out = min(out, g_value(Vt, spec) - t * g1 - (1 - t) * g2)
    return out


# ---------------------------------------------------------------- Lieb-Thirring


def semiclassical_constant(gamma: float, n: int) -> float:
    """``L^cl_{gamma,n} = Gamma(gamma+1) / ((4 pi)^(n/2) Gamma(gamma + n/2 + 1))``."""
    return math.gamma(gamma + 1) / ((4 * math.pi) ** (n / 2) * math.gamma(gamma + n / 2 + 1))


def lieb_thirring_reference(gamma: float, n: int) -> float:
    """Reference constant used by the LT check, four times the semiclassical value."""
    return 4.0 * semiclassical_constant(gamma, n)


@dataclass
class LTRecord:
    gamma: float
    eigenvalues: np.ndarray
    riesz_sum: float
    integral: float
    ratio: float
    reference: float
    capped: bool = False

    @property
    def ok(self) -> bool:
        return self.ratio <= self.reference


def _negative_cartesian(op, cap, seed):
    m = 8
    while True:
        m = min(m, cap, op.grid.size - 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCrossingAtK)
            frame = _cartesian_eigs(op, m, 1e-10, None, seed, DEG_TOL, 3)
        vals = frame.eigenvalues
        if vals[-1] >= 0 or m >= cap:
            return vals[vals < 0], bool(vals[-1] < 0)
        m *= 2


def _negative_radial(op, cap):
    grid = op.grid
    out, l, capped = [], 0, False
    while True:
        d, e = op.channel(l)
        vals = eigh_tridiagonal(d, e, eigvals_only=True, select="v", select_range=(-np.inf, 0.0))
        if vals.size == 0:
            break
        g = angular_degeneracy(grid.n, l)
        for v in vals:
            out.extend([v] * g)
        if len(out) >= cap:
            capped = True
            break
        l += 1
    return np.sort(np.array(out)), capped


def lieb_thirring_ratio(V: ScalarField, gamma: float, a: float = 1.0, *, reference: float | None = None,
                        cap: int = 4096, seed: int = 0) -> LTRecord:
    """``sum |mu_j|^gamma / int (aV)_+^(gamma + n/2)`` for ``-Delta - a V`` with the confinement dropped.

    Radial grids count every angular channel with its multiplicity.  Hitting
    ``cap`` bound states emits :class:`TooManyBoundStates`; the ratio is then a
    lower bound.
    """
    grid = V.grid
    n = grid.n
    op = assemble_hamiltonian(None, V, a)
    if op.is_radial:
        mu, capped = _negative_radial(op, cap)
    else:
        mu, capped = _negative_cartesian(op, min(cap, 256), seed)
    if capped:
        warnings.warn("bound-state enumeration capped; ratio is a lower bound", TooManyBoundStates, stacklevel=2)
    s = float(np.sum(np.abs(mu) ** gamma))
    integral = grid.integrate(np.maximum(a * V.values, 0.0) ** (gamma + n / 2))
    ref = lieb_thirring_reference(gamma, n) if reference is None else reference
    ratio = s / integral if integral > 0 else 0.0
    return LTRecord(gamma, mu, s, integral, ratio, ref, capped)


__all__ = [
    "Hamiltonian", "OrbitalFrame", "LTRecord", "assemble_hamiltonian", "lowest_eigs", "g_value",
    "g_supergradient", "frame_for", "rearrangement_check", "concavity_probe", "lieb_thirring_ratio",
    "semiclassical_constant", "lieb_thirring_reference", "angular_degeneracy", "centrifugal_term",
]
