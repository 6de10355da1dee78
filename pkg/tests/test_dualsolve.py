import math

import numpy as np
import pytest

from choquard.dualsolve import (
    TRACE_COLUMNS, el_residual, h_value, quadratic_term, scf_step, solve_dual, thomas_fermi_seed, with_source,
)
from choquard.errors import IterationCapExceeded
from choquard.model import GridSpec, ProblemSpec, ScalarField, make_grid, validate_spec


def osc(k=1, beta=(1.0,), a=0.1, points=32, R=8.0, **kw):
    return validate_spec(ProblemSpec(3, 2.0, k, beta, a, geometry=GridSpec(R, points), **kw))


@pytest.fixture(scope="module")
def k1_report():
    return solve_dual(osc())


def test_converges_on_oscillator(k1_report):
    rep = k1_report
    assert rep.status == "converged"
    assert rep.el_residual <= 1e-6
    # frozen value for this grid
    assert math.isclose(rep.H, 2.949121776, rel_tol=1e-9)
    assert rep.H < 3.0


def test_trace_is_monotone(k1_report):
    H = k1_report.column("H")
    assert np.all(np.diff(H) <= 1e-10)
    assert list(k1_report.column("iter")) == list(range(1, len(H) + 1))


def test_trace_columns_consistent(k1_report):
    row = dict(zip(TRACE_COLUMNS, k1_report.history[-1]))
    assert math.isclose(row["H"], row["G"] + row["quad"], rel_tol=1e-14)


def test_h_value_and_residual_at_solution(k1_report):
    rep = k1_report
    spec = osc()
    assert math.isclose(h_value(rep.V, spec), rep.H, rel_tol=1e-10)
    assert el_residual(rep.V, spec) <= 1e-6


def test_source_tracking_is_consistent(k1_report):
    spec = osc()
    V = rep_V = k1_report.V
    bare = ScalarField(V.grid, V.values)
    fresh = with_source(bare, spec)
    assert math.isclose(quadratic_term(fresh, spec), quadratic_term(rep_V, spec), rel_tol=1e-6)


def test_scf_step_never_increases_h():
    spec = osc(a=2.0, points=24, R=7.0)
    grid = make_grid(spec)
    V = with_source(ScalarField(grid, np.zeros(grid.shape)), spec)
    H = h_value(V, spec)
    for _ in range(4):
        V = scf_step(V, spec)
        Hn = h_value(V, spec)
        assert Hn <= H + 1e-10
        H = Hn
    with pytest.raises(ValueError):
        scf_step(V, spec, theta=0.0)


def test_seed_start_agrees_with_zero_start(k1_report):
    rep = solve_dual(osc(), "seed")
    assert rep.status == "converged"
    assert math.isclose(rep.H, k1_report.H, rel_tol=1e-8)


def test_iteration_cap_and_resume():
    spec = osc(a=3.0, points=24, R=7.0)
    part = solve_dual(spec, max_iter=2)
    assert part.status == "stalled"
    assert part.iterations == 2
    rest = solve_dual(spec, part.V, start_iter=part.iterations)
    assert rest.history[0][0] == 3
    assert rest.status == "converged"
    full = solve_dual(spec)
    assert math.isclose(rest.H, full.H, rel_tol=1e-9)
    with pytest.raises(IterationCapExceeded):
        solve_dual(spec, max_iter=1, raise_on_stall=True)


def test_thomas_fermi_seed_has_unit_mass():
    spec = osc()
    grid = make_grid(spec)
    V = thomas_fermi_seed(spec, grid)
    assert math.isclose(grid.integrate(V.source), 1.0, rel_tol=1e-12)
    assert V.values.min() > 0


def test_ball_truncation_is_below_freespace():
    free = solve_dual(osc(mode="radial", points=400, R=8.0, a=1.0))
    ball = solve_dual(osc(mode="radial", points=400, R=8.0, a=1.0, potential_domain="ball"))
    assert free.status == ball.status == "converged"
    # the Dirichlet-ball potential is pointwise smaller, so the binding is weaker
    assert np.all(ball.V.values <= free.V.values + 1e-12)
    assert ball.H > free.H


def test_radial_and_cartesian_agree():
    rad = solve_dual(osc(mode="radial", points=800, R=8.0))
    car = solve_dual(osc(points=48))
    # the 7-point Laplacian at h = 1/3 lowers the levels by about 0.7%
    assert math.isclose(rad.H, car.H, rel_tol=1e-2)
    assert car.H < rad.H


def test_critical_coupling_far_above_threshold_is_flagged():
    spec = validate_spec(ProblemSpec(4, 2.0, 1, (1.0,), 1500.0, mode="radial", geometry=GridSpec(10.0, 1000)))
    rep = solve_dual(spec, max_iter=200)
    assert rep.status == "unbounded-suspected"


def test_callback_sees_every_row():
    rows = []
    rep = solve_dual(osc(), callback=lambda row, V, fr, th: rows.append(row))
    assert rows == rep.history
