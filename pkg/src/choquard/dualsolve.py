"""Dual functional ``H`` and its monotone self-consistent minimisation.

``H(V) = (a/2) <V, (-Delta)^(alpha/2) V> + G(V)`` is the sum of a convex
quadratic and the concave spectral functional ``G``.  Linearising ``G`` at
``V`` with its supergradient ``-a rho`` and minimising the convex part exactly
gives ``V* = I_alpha * rho``: the classical self-consistent field step, which
never increases ``H``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import IterationCapExceeded
from .fracops import FracOperator, get_operator
from .model import ProblemSpec, ScalarField, eval_confinement, make_grid, validate_spec
from .spectrum import OrbitalFrame, frame_for

TRACE_COLUMNS = ("iter", "H", "G", "quad", "el_residual", "theta")


def potential_operator(spec: ProblemSpec, grid) -> FracOperator:
    """Riesz map used by the solvers: free space, or the Dirichlet ball of radius ``R``."""
    mode = "dirichlet" if spec.potential_domain == "ball" else "freespace"
    return get_operator(grid, float(spec.alpha), mode)


def with_source(V: ScalarField, spec: ProblemSpec) -> ScalarField:
    """Return ``V`` carrying its discrete fractional Laplacian for the solver operator."""
    op = potential_operator(spec, V.grid)
    if V.source is not None and V.source_tag == op.tag:
        return V
    return ScalarField(V.grid, V.values, V.role, op.laplacian(V.values), op.tag)


def _source(V: ScalarField, op: FracOperator):
    if V.source is not None and V.source_tag == op.tag:
        return V.source
    return op.laplacian(V.values)


def quadratic_term(V: ScalarField, spec: ProblemSpec) -> float:
    """``<V, (-Delta)^(alpha/2) V>`` for the solver operator."""
    op = potential_operator(spec, V.grid)
    return V.grid.inner(_source(V, op), V.values)


def h_value(V: ScalarField, spec: ProblemSpec, frame: OrbitalFrame | None = None) -> float:
    """``H(V) = (a/2) ||V||^2 + sum_j beta_j lambda_j(V)``."""
    if frame is None:
        frame = frame_for(V, spec)
    return 0.5 * spec.a * quadratic_term(V, spec) + float(np.dot(spec.beta, frame.eigenvalues))


def el_residual(V: ScalarField, spec: ProblemSpec, frame: OrbitalFrame | None = None) -> float:
    """``||(-Delta)^(alpha/2) V - rho(V)|| / (1 + ||rho(V)||)``."""
    if frame is None:
        frame = frame_for(V, spec)
    op = potential_operator(spec, V.grid)
    rho = frame.density(spec.beta)
    g = V.grid
    return g.norm(_source(V, op) - rho) / (1.0 + g.norm(rho))


def scf_step(V: ScalarField, spec: ProblemSpec, theta: float = 1.0, frame: OrbitalFrame | None = None) -> ScalarField:
    """One mixed DC step ``(1 - theta) V + theta I_alpha * rho(V)``."""
    if not 0 < theta <= 1:
        raise ValueError("mixing theta must lie in (0, 1]")
    if frame is None:
        frame = frame_for(V, spec)
    op = potential_operator(spec, V.grid)
    rho = frame.density(spec.beta)
    vstar = op.riesz(rho)
    src = _source(V, op)
    return ScalarField(V.grid, (1 - theta) * V.values + theta * vstar, "potential",
                       (1 - theta) * src + theta * rho, op.tag)


def rms_radius(rho, grid) -> float:
    mass = grid.integrate(rho)
    if mass <= 0:
        return math.inf
    return math.sqrt(grid.integrate(grid.radius**2 * rho) / mass)


@dataclass
class SolveReport:
    """Outcome of :func:`solve_dual`.

    ``history`` holds one row per accepted iteration with the columns of
    ``TRACE_COLUMNS``.  ``status`` is ``"converged"``, ``"stalled"`` or
    ``"unbounded-suspected"``.
    """

    V: ScalarField
    frame: OrbitalFrame
    status: str
    history: list = field(default_factory=list)
    rejected: int = 0
    theta: float = 1.0
    duality_gap: float | None = None
    message: str = ""

    @property
    def H(self) -> float:
        return self.history[-1][1] if self.history else math.nan

    @property
    def iterations(self) -> int:
        return int(self.history[-1][0]) if self.history else 0

    @property
    def el_residual(self) -> float:
        return self.history[-1][4] if self.history else math.nan

    def column(self, name):
        i = TRACE_COLUMNS.index(name)
        return np.array([row[i] for row in self.history])

    def write_csv(self, path):
        write_trace(path, TRACE_COLUMNS, self.history)


def write_trace(path, columns, rows, mode="w"):
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def thomas_fermi_seed(spec: ProblemSpec, grid) -> ScalarField:
    """Potential of a smoothed semiclassical density filling up to the bare ``lambda_k``."""
    W = eval_confinement(spec, grid)
    zero = ScalarField(grid, np.zeros(grid.shape))
    mu = frame_for(zero, spec.replace(a=0.0), W=W).eigenvalues[-1]
    rho = np.maximum(mu - W.values, 0.0) ** (spec.n / 2)
    rho = ndimage.gaussian_filter(rho, 1.0, mode="constant")
    rho /= grid.integrate(rho)
    op = potential_operator(spec, grid)
    return ScalarField(grid, op.riesz(rho), "potential", rho, op.tag)


def solve_dual(spec: ProblemSpec, init="zero", *, max_iter: int = 500, tol_h: float = 1e-10,
               tol_el: float = 1e-6, theta0: float = 1.0, theta_min: float = 2.0**-20,
               h_floor: float = -1e6, hnorm_cap: float = 1e8, collapse_cells: float = 2.0,
               start_iter: int = 0, grid=None, mem_cap: int | None = None, seed: int = 0,
               callback=None, raise_on_stall: bool = False) -> SolveReport:
    """Minimise ``H`` by monotone DC/SCF iteration with adaptive mixing.

    Parameters
    ----------
    spec : ProblemSpec
    init : {"zero", "seed"} or ScalarField
        Starting potential.  ``"seed"`` uses :func:`thomas_fermi_seed`.
    max_iter : int
        Iteration cap; ``start_iter`` offsets the count when resuming.
    tol_h, tol_el : float
        Stop when the relative change of ``H`` and the EL residual are below these.
    theta0, theta_min : float
        Initial mixing and the floor below which the run is declared stalled.
    h_floor, hnorm_cap, collapse_cells : float
        Runaway guards.  ``H < h_floor``, ``||V||^2 > hnorm_cap`` or a density rms
        radius below ``collapse_cells`` grid spacings flag ``unbounded-suspected``.
    callback : callable, optional
        Called as ``callback(row, V, frame, theta)`` after each accepted iteration.

    Returns
    -------
    SolveReport
    """
    spec = validate_spec(spec)
    if isinstance(init, ScalarField):
        grid = init.grid
        V = with_source(init, spec)
    else:
        grid = grid if grid is not None else make_grid(spec, mem_cap)
        if init == "zero":
            op = potential_operator(spec, grid)
            V = ScalarField(grid, np.zeros(grid.shape), "potential", np.zeros(grid.shape), op.tag)
        elif init in ("seed", "thomas-fermi"):
            V = thomas_fermi_seed(spec, grid)
        else:
            raise ValueError(f"unknown init {init!r}")
    W = eval_confinement(spec, grid)
    beta = np.asarray(spec.beta)
    a = spec.a

    frame = frame_for(V, spec, W=W, seed=seed)
    quad = quadratic_term(V, spec)
    H = 0.5 * a * quad + float(beta @ frame.eigenvalues)
    theta = float(theta0)
    streak = 0
    rejected = 0
    history = []
    status, message = "stalled", "iteration cap reached"
    it = start_iter
    while it < max_iter:
        rho_vals = frame.density(beta)
        op = potential_operator(spec, grid)
        vstar = op.riesz(rho_vals)
        src = V.source
        v0 = frame.states.sum(axis=0)
        while True:
            vals = (1 - theta) * V.values + theta * vstar
            new = ScalarField(grid, vals, "potential", (1 - theta) * src + theta * rho_vals, op.tag)
            new_frame = frame_for(new, spec, W=W, v0=v0, seed=seed)
            new_quad = grid.inner(new.source, vals)
            new_G = float(beta @ new_frame.eigenvalues)
            new_H = 0.5 * a * new_quad + new_G
            if new_H <= H + 1e-10:
                break
            rejected += 1
            streak = 0
            theta *= 0.5
            if theta < theta_min:
                break
        if theta < theta_min:
            status, message = "stalled", "mixing fell below its floor without descent"
            break
        it += 1
        dH = abs(new_H - H)
        V, frame, H, quad = new, new_frame, new_H, new_quad
        rho_new = frame.density(beta)
        el = grid.norm(V.source - rho_new) / (1.0 + grid.norm(rho_new))
        row = (it, H, new_G, 0.5 * a * quad, el, theta)
        history.append(row)
        if callback is not None:
            callback(row, V, frame, theta)
        if H < h_floor or quad > hnorm_cap:
            status, message = "unbounded-suspected", "H fell below the floor or ||V|| blew up"
            break
        if a > 0 and rms_radius(rho_new, grid) <= collapse_cells * grid.h:
            status, message = "unbounded-suspected", "density collapsed to the grid scale"
            break
        if dH <= tol_h * max(1.0, abs(H)) and el <= tol_el:
            status, message = "converged", ""
            break
        streak += 1
        if streak >= 3 and theta < 1.0:
            theta = min(1.0, 2 * theta)
            streak = 0
    report = SolveReport(V, frame, status, history, rejected, theta, None, message)
    if status == "stalled" and raise_on_stall:
        raise IterationCapExceeded(message)
    return report
