"""Primal energy over orthonormal frames and its Riemannian minimisation.

``E(phi) = 1/2 sum_j beta_j <<phi_j, phi_j>>_W - (a/4) <rho, I_alpha * rho>``
with ``rho = sum_j beta_j |phi_j|^2``.  At a self-consistent point the dual
value satisfies ``H = 2E``; :func:`duality_gap` measures the defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dualsolve import h_value, potential_operator, write_trace
from .errors import IterationCapExceeded, NonOrthonormalFrame
from .model import ProblemSpec, ScalarField, eval_confinement, make_grid, validate_spec
from .spectrum import OrbitalFrame, assemble_hamiltonian, frame_for

ORTH_TOL = 1e-8
PRIMAL_COLUMNS = ("iter", "E", "gradnorm", "orthodefect")


def _gram(states, grid):
    k = states.shape[0]
    flat = states.reshape(k, -1)
    if grid.kind == "radial":
        return (flat * grid.weights) @ flat.T
    return grid.cell_volume * (flat @ flat.T)


def _cross(A, B, grid):
    k = A.shape[0]
    fa, fb = A.reshape(k, -1), B.reshape(B.shape[0], -1)
    if grid.kind == "radial":
        return (fa * grid.weights) @ fb.T
    return grid.cell_volume * (fa @ fb.T)


def orthonormalize(states, grid):
    """Sequential (Gram-Schmidt order ``j = 1..k``) orthonormalisation in the grid inner product."""
    out = np.array(states, dtype=float)
    k = out.shape[0]
    for _ in range(2):
        L = np.linalg.cholesky(_gram(out, grid))
        flat = np.linalg.solve(L, out.reshape(k, -1))
        out = flat.reshape(out.shape)
    return out


def pair_terms(frame: OrbitalFrame, spec: ProblemSpec) -> np.ndarray:
    """Matrix ``P[i, j] = <|phi_i|^2, I_alpha * |phi_j|^2>``."""
    op = potential_operator(spec, frame.grid)
    dens = frame.states**2
    pots = np.array([op.riesz(d) for d in dens])
    return _cross(dens, pots, frame.grid)


class _Energy:
    """Energy, mean field and gradient for frames on one grid."""

    def __init__(self, spec, grid):
        self.spec = spec
        self.grid = grid
        self.beta = np.asarray(spec.beta)
        self.H0 = assemble_hamiltonian(eval_confinement(spec, grid), None, 0.0)
        self.op = potential_operator(spec, grid)

    def evaluate(self, states):
        b = self.beta
        L0 = self.H0.apply(states)
        rho = np.tensordot(b, states**2, axes=1)
        V = self.op.riesz(rho)
        kin = float(b @ np.diagonal(_cross(states, L0, self.grid)))
        pair = self.grid.inner(rho, V)
        E = 0.5 * kin - 0.25 * self.spec.a * pair
        return E, L0, V

    def gradient(self, states, L0, V):
        # dE/dphi_j = beta_j (L^W - a V) phi_j
        return self.beta.reshape((-1,) + (1,) * (states.ndim - 1)) * (L0 - self.spec.a * V * states)


def energy_primal(frame: OrbitalFrame, spec: ProblemSpec) -> float:
    """Primal energy of an orthonormal frame.

    Raises
    ------
    NonOrthonormalFrame
        If the Gram matrix deviates from the identity by more than 1e-8.
    """
    defect = frame.orthonormality_defect()
    if defect > ORTH_TOL:
        raise NonOrthonormalFrame(f"orthonormality defect {defect:.3g}")
    if len(spec.beta) != frame.k:
        raise ValueError("frame size does not match k")
    return _Energy(spec, frame.grid).evaluate(frame.states)[0]


def lagrange_matrix(frame: OrbitalFrame, spec: ProblemSpec) -> np.ndarray:
    """``M[i, j] = <phi_i, (L^W - a V) phi_j>`` with the self-consistent ``V``."""
    en = _Energy(spec, frame.grid)
    _, L0, V = en.evaluate(frame.states)
    Hphi = L0 - spec.a * V * frame.states
    M = _cross(frame.states, Hphi, frame.grid)
    return 0.5 * (M + M.T)


def duality_gap(V: ScalarField, frame: OrbitalFrame, spec: ProblemSpec) -> float:
    """``|H(V) - 2 E(frame)| / (1 + |H(V)|)``."""
    H = h_value(V, spec)
    return abs(H - 2 * energy_primal(frame, spec)) / (1 + abs(H))


@dataclass
class PrimalReport:
    """Outcome of :func:`stiefel_descent`; ``history`` rows follow ``PRIMAL_COLUMNS``."""

    frame: OrbitalFrame
    E: float
    status: str
    history: list = field(default_factory=list)
    lagrange: np.ndarray | None = None

    @property
    def gradnorm(self) -> float:
        return self.history[-1][2] if self.history else math.nan

    def column(self, name):
        i = PRIMAL_COLUMNS.index(name)
        return np.array([row[i] for row in self.history])

    def write_csv(self, path):
        write_trace(path, PRIMAL_COLUMNS, self.history)


def stiefel_descent(spec: ProblemSpec, init: OrbitalFrame | None = None, *, max_iter: int = 2000,
                    gtol: float = 1e-6, grid=None, mem_cap: int | None = None, shift: float | None = None,
                    cg: bool = True, seed: int = 0, raise_on_stall: bool = False) -> PrimalReport:
    """Minimise the primal energy over grid-orthonormal ``k``-frames.

    Preconditioned (nonlinear conjugate) projected gradient on the Stiefel
    manifold with the sequential orthonormalisation retraction and an Armijo
    backtracking line search, so the energy never increases.  The default start
    is the ``k`` lowest eigenstates of the bare confined operator.
    """
    spec = validate_spec(spec)
    if init is None:
        grid = grid if grid is not None else make_grid(spec, mem_cap)
        zero = ScalarField(grid, np.zeros(grid.shape))
        init = frame_for(zero, spec.replace(a=0.0), seed=seed)
    grid = init.grid
    en = _Energy(spec, grid)
    beta = en.beta
    bshape = (-1,) + (1,) * grid.n if grid.kind == "cartesian" else (-1, 1)
    bcol = beta.reshape(bshape)
    c = shift if shift is not None else max(1.0, float(np.max(np.abs(init.eigenvalues))))
    prec = en.H0.preconditioner(c)

    X = orthonormalize(init.states, grid)

    def project(X, G):
        S = _cross(X, G, grid)
        S = 0.5 * (S + S.T)
        return G - np.tensordot(S.T, X, axes=1)

    E, L0, V = en.evaluate(X)
    history = []
    status = "stalled"
    step = 1.0
    D_prev = Z_prev = None
    gz_prev = None
    for it in range(1, max_iter + 1):
        G = project(X, en.gradient(X, L0, V))
        gnorm = math.sqrt(float(np.trace(_gram(G, grid))))
        history.append((it - 1, E, gnorm, float(np.abs(_gram(X, grid) - np.eye(len(beta))).max())))
        if gnorm <= gtol:
            status = "converged"
            break
        Z = project(X, prec(G) / bcol)
        gz = float(np.trace(_cross(G, Z, grid)))
        D = -Z
        if cg and D_prev is not None and gz_prev > 0:
            pr = max(0.0, (gz - float(np.trace(_cross(G, Z_prev, grid)))) / gz_prev)
            D = -Z + pr * project(X, D_prev)
        slope = float(np.trace(_cross(G, D, grid)))
        if slope >= 0:
            D, slope = -Z, -gz
        t = min(1.0, 2.0 * step)
        accepted = False
        while t > 1e-12:
            Xt = orthonormalize(X + t * D, grid)
            Et, L0t, Vt = en.evaluate(Xt)
            if Et <= E + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = "stalled"
            break
        step = t
        X, E, L0, V = Xt, Et, L0t, Vt
        D_prev, Z_prev, gz_prev = D, Z, gz
    frame = _frame_from_states(X, en, L0, V, spec)
    if status == "stalled" and raise_on_stall:
        raise IterationCapExceeded("primal descent hit its iteration cap")
    return PrimalReport(frame, E, status, history, _cross(X, L0 - spec.a * V * X, grid))


def _frame_from_states(X, en, L0, V, spec):
    grid = en.grid
    HX = L0 - spec.a * V * X
    ray = np.einsum("ii->i", _cross(X, HX, grid))
    res = np.sqrt(np.einsum("ii->i", _gram(HX - ray.reshape((-1,) + (1,) * (X.ndim - 1)) * X, grid)))
    return OrbitalFrame(grid, X, ray, None, res)
