"""Batch command-line driver.

Every run reads a JSON problem spec, writes into one output directory and
exits with a code from :data:`EXIT_CODES`.  Outputs per run:

``manifest.json``   the resolved manifest, seed and spec hash
``trace_*.csv``     iteration traces
``spectrum.csv``    final eigenvalues (solver commands)
``checkpoint.chk``  final fields (solver commands)
``summary.json``    key numbers, each copied from a trace row
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import critical
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dualsolve import TRACE_COLUMNS, potential_operator, solve_dual, write_trace
from .errors import (
    CheckpointError, ChoquardError, ConfigParseError, GridMismatch, IterationCapExceeded,
    OutOfMemoryBudget, ResourceCap, SpecError,
)
from .model import (
    ProblemSpec, RadialGrid, ScalarField, eval_confinement, grid_from_description, make_grid, spec_from_json,
)
from .primal import duality_gap, stiefel_descent
from .spectrum import (
    OrbitalFrame, assemble_hamiltonian, lieb_thirring_ratio, lieb_thirring_reference, lowest_eigs,
)

COMMANDS = ("solve-dual", "solve-primal", "duality-check", "critical-scan", "barphi", "inequality-suite")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_STALLED = 3
EXIT_UNBOUNDED = 4
EXIT_RESOURCE = 5
EXIT_CHECKPOINT = 6

EXIT_CODES = {
    EXIT_OK: "converged / complete",
    EXIT_ERROR: "numerical or unexpected error",
    EXIT_CONFIG: "config parse or validation error",
    EXIT_STALLED: "solver stalled or hit its iteration cap",
    EXIT_UNBOUNDED: "unbounded-suspected",
    EXIT_RESOURCE: "memory or wall-time cap exceeded",
    EXIT_CHECKPOINT: "checkpoint version or spec-hash mismatch",
}

_STATUS_EXIT = {"converged": EXIT_OK, "complete": EXIT_OK, "stalled": EXIT_STALLED,
                "unbounded-suspected": EXIT_UNBOUNDED}


@dataclass
class RunManifest:
    """One batch run: command, inputs, output directory and resource caps."""

    command: str
    config: str | None = None
    out: str = "out"
    seed: int = 0
    resume: str | None = None
    max_iters: int | None = None
    mem_cap: int | None = None
    wall_time: float | None = None
    options: dict = field(default_factory=dict)


@dataclass
class RunResult:
    exit_code: int
    status: str
    summary: dict
    message: str = ""


class _Clock:
    def __init__(self, limit):
        self.limit = limit
        self.t0 = time.monotonic()

    def check(self):
        if self.limit is not None and time.monotonic() - self.t0 > self.limit:
            raise ResourceCap(f"wall-time cap of {self.limit} s exceeded")


def _load_spec(m: RunManifest) -> ProblemSpec:
    if m.config is None:
        raise ConfigParseError("--config is required for this command")
    try:
        with open(m.config) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc}") from exc
    return spec_from_json(text)


def _fields(V: ScalarField, frame: OrbitalFrame | None) -> dict:
    out = {"V": V.values}
    if V.source is not None:
        out["source"] = V.source
    if frame is not None:
        for j, s in enumerate(frame.states, 1):
            out[f"phi_{j}"] = s
    return out


def _write_spectrum(path, frame: OrbitalFrame):
    rows = []
    for j, lam in enumerate(frame.eigenvalues):
        l, nodes = frame.labels[j] if frame.labels else ("", "")
        res = frame.residuals[j] if frame.residuals is not None else math.nan
        rows.append((j + 1, float(lam), l, nodes, float(res)))
    write_trace(path, ("index", "eigenvalue", "l", "nodes", "residual"), rows)


def _sector_spectrum(spec, V, frame, sector):
    if sector == "s" or spec.mode != "radial":
        return frame
    op = assemble_hamiltonian(eval_confinement(spec, V.grid), V, spec.a)
    return lowest_eigs(op, spec.k, sector="full")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# ---------------------------------------------------------------- commands


def _run_dual(m: RunManifest, spec: ProblemSpec, clock: _Clock, out: str, summary: dict):
    max_iter = m.max_iters if m.max_iters is not None else 500
    trace = os.path.join(out, "trace_dual.csv")
    ckpt_path = os.path.join(out, "checkpoint.chk")
    spec_hash = spec.hash()
    init, start, theta0, mode = m.options.get("init", "zero"), 0, 1.0, "w"
    if m.resume:
        ck = load_checkpoint(m.resume, expect_spec_hash=spec_hash)
        grid = grid_from_description(ck.grid)
        expect = make_grid(spec, m.mem_cap)
        if grid.describe() != expect.describe():
            raise GridMismatch("checkpoint grid differs from the spec geometry")
        tag = potential_operator(spec, grid).tag
        src = ck.fields.get("source")
        init = ScalarField(grid, ck.fields["V"], "potential", src, tag if src is not None else None)
        start = ck.iteration
        theta0 = float(ck.meta.get("theta", 1.0))
        mode = "a" if os.path.exists(trace) else "w"
    if mode == "w":
        write_trace(trace, TRACE_COLUMNS, [])

    def callback(row, V, frame, theta):
        write_trace(trace, TRACE_COLUMNS, [row], mode="a")
        save_checkpoint(ckpt_path, Checkpoint(V.grid.describe(), _fields(V, frame), spec_hash, int(row[0]),
                                              {"theta": theta, "seed": m.seed, "command": m.command}))
        clock.check()

    rep = solve_dual(spec, init, max_iter=max_iter, start_iter=start, theta0=theta0, mem_cap=m.mem_cap,
                     seed=m.seed, callback=callback)
    frame = _sector_spectrum(spec, rep.V, rep.frame, m.options.get("radial_sector", "s"))
    _write_spectrum(os.path.join(out, "spectrum.csv"), frame)
    if m.options.get("dump_kernel"):
        op = potential_operator(spec, rep.V.grid)
        np.savetxt(os.path.join(out, "kernel.csv"), op.kernel_table(), delimiter=",")
    summary.update(status=rep.status, message=rep.message, iterations=rep.iterations, H=rep.H,
                   el_residual=rep.el_residual, rejected=rep.rejected,
                   eigenvalues=[float(x) for x in rep.frame.eigenvalues],
                   max_eig_residual=float(np.max(rep.frame.residuals)) if rep.frame.residuals is not None else None)
    return rep


def _run_primal(m: RunManifest, spec: ProblemSpec, clock: _Clock, out: str, summary: dict):
    max_iter = m.max_iters if m.max_iters is not None else 2000
    rep = stiefel_descent(spec, max_iter=max_iter, mem_cap=m.mem_cap, seed=m.seed,
                          gtol=float(m.options.get("tol") or 1e-6))
    clock.check()
    rep.write_csv(os.path.join(out, "trace_primal.csv"))
    fr = rep.frame
    fields = {f"phi_{j}": s for j, s in enumerate(fr.states, 1)}
    save_checkpoint(os.path.join(out, "checkpoint.chk"),
                    Checkpoint(fr.grid.describe(), fields, spec.hash(), len(rep.history) - 1,
                               {"seed": m.seed, "command": m.command}))
    summary.update(status=rep.status, iterations=int(rep.history[-1][0]), E=rep.E, gradnorm=rep.gradnorm,
                   orthodefect=rep.history[-1][3])
    return rep


def _cmd_solve_dual(m, spec, clock, out, summary):
    return _run_dual(m, spec, clock, out, summary).status


def _cmd_solve_primal(m, spec, clock, out, summary):
    return _run_primal(m, spec, clock, out, summary).status


def _cmd_duality_check(m, spec, clock, out, summary):
    d = {}
    dual = _run_dual(m, spec, clock, out, d)
    p = {}
    primal = _run_primal(m, spec, clock, out, p)
    gap = duality_gap(dual.V, primal.frame, spec)
    write_trace(os.path.join(out, "trace_duality.csv"), ("H", "E", "gap"), [(dual.H, primal.E, gap)])
    save_checkpoint(os.path.join(out, "checkpoint.chk"),
                    Checkpoint(dual.V.grid.describe(), _fields(dual.V, primal.frame), spec.hash(),
                               dual.iterations, {"seed": m.seed, "command": m.command}))
    summary.update(dual=d, primal=p, H=dual.H, E=primal.E, duality_gap=gap)
    if dual.status != "converged":
        return dual.status
    return primal.status


def _cmd_critical_scan(m, spec, clock, out, summary):
    lo, hi = m.options.get("bracket") or (0.05, 1000.0)
    tol = float(m.options.get("tol") or 1.0)
    scan = critical.estimate_ac(spec.beta, spec, bracket=(lo, hi), tol=tol)
    clock.check()
    write_trace(os.path.join(out, "trace_scan.csv"), critical.SCAN_COLUMNS, scan.records)
    summary.update(status="complete", a_c_est=scan.a_c_est, halfwidth=scan.halfwidth,
                   bracket=list(scan.bracket), probes=len(scan.records), monotone=scan.monotone())
    return "complete"


def _cmd_barphi(m, spec, clock, out, summary):
    pts = int(m.options.get("points") or 8192)
    bp = critical.solve_barphi(RadialGrid(4, 40.0, pts))
    clock.check()
    g = bp.phi.grid
    write_trace(os.path.join(out, "trace_barphi.csv"), ("r", "phi"), zip(g.r, bp.phi.values))
    summary.update(status="complete", norm=bp.norm2, norm_squared=bp.norm2**2, a_c=bp.a_c,
                   residual=bp.residual, iterations=bp.iterations)
    return "complete"


def _cmd_inequality_suite(m, spec, clock, out, summary):
    rng = np.random.default_rng(m.seed)
    rows = []
    grid4 = critical.critical_grid(4, 4096)
    hardy = critical.hardy_check(grid=grid4)
    rows.append(("hardy", "min_ratio", hardy, 1.0, int(hardy >= 0.995)))
    r = grid4.r
    for s in (0.5, 1.0, 2.0):
        rho = np.exp(-(r**2) / (2 * s * s))
        rho /= grid4.integrate(rho)
        ratio = critical.newton_bound_ratio(ScalarField(grid4, rho, "density"))
        rows.append(("newton", f"gauss s={s}", ratio, 1.0, int(ratio <= 1.0 + 1e-12)))
    grid3 = RadialGrid(3, 20.0, 1024)
    gamma = 1.0
    ref = lieb_thirring_reference(gamma, 3)
    n_lt = int(m.options.get("lt_samples") or 50)
    for i in range(n_lt):
        depth, width = 10 ** rng.uniform(0, 2), rng.uniform(0.5, 3.0)
        V = ScalarField(grid3, depth * np.exp(-(grid3.r**2) / (2 * width * width)))
        rec = lieb_thirring_ratio(V, gamma, 1.0, reference=ref)
        rows.append(("lieb-thirring", f"sample {i}", rec.ratio, ref, int(rec.ok)))
        clock.check()
    write_trace(os.path.join(out, "trace_inequalities.csv"), ("check", "case", "value", "bound", "ok"), rows)
    ok = all(row[4] for row in rows)
    summary.update(status="complete" if ok else "violated", hardy_min=hardy,
                   newton_max=max(row[2] for row in rows if row[0] == "newton"),
                   lt_max=max(row[2] for row in rows if row[0] == "lieb-thirring"), lt_reference=ref,
                   all_ok=ok)
    return "complete" if ok else "violated"


_DISPATCH = {
    "solve-dual": _cmd_solve_dual,
    "solve-primal": _cmd_solve_primal,
    "duality-check": _cmd_duality_check,
    "critical-scan": _cmd_critical_scan,
    "barphi": _cmd_barphi,
    "inequality-suite": _cmd_inequality_suite,
}

_NEEDS_SPEC = {"solve-dual", "solve-primal", "duality-check", "critical-scan"}


def run(manifest: RunManifest) -> RunResult:
    """Execute one manifest and map its outcome to an exit code."""
    m = manifest
    summary = {"command": m.command, "seed": m.seed}
    try:
        if m.command not in _DISPATCH:
            raise ConfigParseError(f"unknown command {m.command!r}")
        os.makedirs(m.out, exist_ok=True)
        spec = _load_spec(m) if m.command in _NEEDS_SPEC or m.config else None
        man = asdict(m)
        if spec is not None:
            man["spec_hash"] = summary["spec_hash"] = spec.hash()
            man["spec"] = spec.to_dict()
        _write_json(os.path.join(m.out, "manifest.json"), man)
        np.random.seed(m.seed)
        status = _DISPATCH[m.command](m, spec, _Clock(m.wall_time), m.out, summary)
        code = _STATUS_EXIT.get(status, EXIT_ERROR)
        message = summary.get("message", "")
    except SpecError as exc:
        status, code, message = "config-error", EXIT_CONFIG, str(exc)
    except CheckpointError as exc:
        status, code, message = "checkpoint-error", EXIT_CHECKPOINT, str(exc)
    except (ResourceCap, OutOfMemoryBudget) as exc:
        status, code, message = "resource-cap", EXIT_RESOURCE, str(exc)
    except IterationCapExceeded as exc:
        status, code, message = "stalled", EXIT_STALLED, str(exc)
    except (ChoquardError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        status, code, message = "error", EXIT_ERROR, f"{type(exc).__name__}: {exc}"
    summary.update(status=status, exit_code=code, message=message)
    if os.path.isdir(m.out):
        _write_json(os.path.join(m.out, "summary.json"), summary)
    return RunResult(code, status, summary, message)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="choquard", description="Dual/primal Choquard solvers and critical-coupling scans.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="JSON problem spec")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (owned by this run)")
    p.add_argument("--seed", metavar="N", type=int, default=0)
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue solve-dual from a checkpoint")
    p.add_argument("--max-iters", metavar="N", type=int)
    p.add_argument("--mem-cap", metavar="BYTES", type=int)
    p.add_argument("--wall-time", metavar="SECONDS", type=float)
    p.add_argument("--bracket", nargs=2, type=float, metavar=("LO", "HI"), help="critical-scan bracket")
    p.add_argument("--tol", type=float, help="bracket width (critical-scan) or gradient tolerance (solve-primal)")
    p.add_argument("--radial-sector", choices=("s", "full"), default="s",
                   help="spectrum report: l=0 only, or all channels with multiplicity")
    p.add_argument("--init", choices=("zero", "seed"), default="zero", help="solve-dual starting potential")
    p.add_argument("--points", type=int, help="radial cells for barphi")
    p.add_argument("--lt-samples", type=int, help="random potentials in the Lieb-Thirring suite")
    p.add_argument("--dump-kernel", action="store_true", help="write the Riesz kernel table")
    return p


def manifest_from_args(args) -> RunManifest:
    opts = {
        "bracket": tuple(args.bracket) if args.bracket else None,
        "tol": args.tol,
        "radial_sector": args.radial_sector,
        "init": args.init,
        "points": args.points,
        "lt_samples": args.lt_samples,
        "dump_kernel": args.dump_kernel,
    }
    return RunManifest(args.command, args.config, args.out, args.seed, args.resume, args.max_iters,
                       args.mem_cap, args.wall_time, opts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    res = run(manifest_from_args(args))
    line = f"{args.command}: {res.status}"
    if res.message:
        line += f" ({res.message})"
    print(line, file=sys.stderr if res.exit_code else sys.stdout)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
