"""Problem specification, grids and sampled fields.

A :class:`ProblemSpec` fixes the dimension ``n``, fractional order ``alpha``,
number of states ``k``, occupation weights ``beta``, coupling ``a``, the
confining potential and the discretisation.  :func:`make_grid` turns it into
either a uniform Cartesian node grid on ``[-R, R)^3`` or a cell-centred radial
grid on ``[0, R]``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import ClassVar

import numpy as np

from .errors import (
    BadDimensionOrderPair,
    ConfigParseError,
    DomainError,
    GridMismatch,
    NegativeCoupling,
    NegativeDensity,
    NonDescendingBeta,
    OutOfMemoryBudget,
    SpecError,
    UnboundedBelowConfinement,
)

DEFAULT_MEM_CAP = 8 * 1024**3
BETA_TOL = 1e-12
BETA_RENORM_TOL = 1e-6
ROLES = ("potential", "density", "confinement", "field")


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def classify_pair(n: int, alpha: float) -> str | None:
    """Return the regime label of ``(n, alpha)`` or None if outside the theory."""
    if (n, alpha) == (3, 1.0):
        return "critical pair (3,1)"
    if (n, alpha) == (4, 2.0):
        return "critical pair (4,2)"
    if 3 <= n < 2 + alpha:
        return "subcritical"
    return None


@dataclass(frozen=True)
class Confinement:
    """Radial confining potential.

    ``family="power"`` gives ``W(x) = |x|**exponent``.  ``family="well"`` gives
    the even polynomial ``W(x) = sum_m coefficients[m-1] * |x|**(2m)``, which
    must be nonnegative with its minimum at the origin.
    """

    family: str = "power"
    exponent: float = 2.0
    coefficients: tuple[float, ...] = ()

    def evaluate(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "power":
            return r**self.exponent
        out = np.zeros_like(r)
        r2 = r * r
        for c in reversed(self.coefficients):
            out = (out + c) * r2
        return out

    def check(self):
        if self.family == "power":
            if not self.exponent > 0 or not math.isfinite(self.exponent):
                raise UnboundedBelowConfinement(
                    f"power confinement needs a positive exponent, got {self.exponent}"
                )
        elif self.family == "well":
            c = tuple(float(x) for x in self.coefficients)
            if not c or not all(math.isfinite(x) for x in c):
                raise UnboundedBelowConfinement("well confinement needs coefficients")
            if c[-1] <= 0:
                raise UnboundedBelowConfinement("leading well coefficient must be positive")
            # inf W < 0 is detected on a fine radial sample out to where the
            # leading term dominates every other term.
            rmax = 2.0 + sum(abs(x) for x in c) / c[-1]
            r = np.linspace(0.0, rmax, 20001)
            wmin = float(self.evaluate(r).min())
            if wmin < -1e-12:
                raise UnboundedBelowConfinement(f"well confinement has inf W = {wmin:.3g} < 0")
        else:
            raise SpecError(f"unknown confinement family {self.family!r}")

    def to_dict(self):
        if self.family == "power":
            return {"family": "power", "exponent": float(self.exponent)}
        return {"family": self.family, "coefficients": [float(x) for x in self.coefficients]}


@dataclass(frozen=True)
class GridSpec:
    """Discretisation parameters.

    Attributes
    ----------
    R : float
        Half-width of the Cartesian box or radius of the radial domain.
    points : int
        Nodes per axis (Cartesian) or radial cells.
    lmax : int
        Highest angular channel used by radial spectral reporting.
    padding_factor : int
        Zero-padding factor for FFT-based operators (at least 2).
    """

    R: float
    points: int
    lmax: int = 0
    padding_factor: int = 2

    def to_dict(self):
        return {
            "R": float(self.R),
            "points": int(self.points),
            "lmax": int(self.lmax),
            "padding_factor": int(self.padding_factor),
        }


@dataclass(frozen=True)
class ProblemSpec:
    """Full description of one dual/primal problem instance."""

    n: int
    alpha: float
    k: int
    beta: tuple[float, ...]
    a: float
    confinement: Confinement = field(default_factory=Confinement)
    geometry: GridSpec = field(default_factory=lambda: GridSpec(8.0, 32))
    mode: str = "cartesian"
    potential_domain: str = "freespace"
    exploratory: bool = False

    @property
    def regime(self) -> str:
        label = classify_pair(self.n, self.alpha)
        return label if label is not None else "exploratory"

    @property
    def is_critical(self) -> bool:
        return self.regime.startswith("critical")

    def replace(self, **changes) -> ProblemSpec:
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {
            "n": int(self.n),
            "alpha": float(self.alpha),
            "k": int(self.k),
            "beta": [float(b) for b in self.beta],
            "a": float(self.a),
            "confinement": self.confinement.to_dict(),
            "geometry": self.geometry.to_dict(),
            "mode": self.mode,
            "potential_domain": self.potential_domain,
            "exploratory": bool(self.exploratory),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def validate_spec(raw) -> ProblemSpec:
    """Check admissibility and return a normalised :class:`ProblemSpec`.

    ``raw`` may be a ProblemSpec or a plain dict with the JSON layout.  Weights
    summing to one within 1e-6 are renormalised; anything further off raises.
    """
    spec = raw if isinstance(raw, ProblemSpec) else spec_from_dict(raw)
    n, alpha = int(spec.n), float(spec.alpha)
    if n < 1:
        raise DomainError(f"dimension must be positive, got {n}")
    if not 0 < alpha <= 2:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha}")
    if classify_pair(n, alpha) is None and not spec.exploratory:
        raise BadDimensionOrderPair(
            f"(n, alpha) = ({n}, {alpha:g}) is neither subcritical nor a critical pair; "
            "set exploratory=true to run it anyway"
        )
    if spec.k < 1:
        raise SpecError("k must be at least 1")
    beta = tuple(float(b) for b in spec.beta)
    if len(beta) != spec.k:
        raise SpecError(f"beta has {len(beta)} entries, expected k = {spec.k}")
    if any(not math.isfinite(b) or b <= 0 for b in beta):
        raise SpecError("beta entries must be positive")
    if any(beta[j] - beta[j + 1] < BETA_TOL for j in range(len(beta) - 1)):
        raise NonDescendingBeta(f"beta must be strictly decreasing, got {beta}")
    total = math.fsum(beta)
    if abs(total - 1.0) > BETA_RENORM_TOL:
        raise SpecError(f"beta must sum to 1, got {total!r}")
    if abs(total - 1.0) > BETA_TOL:
        beta = tuple(b / total for b in beta)
    if not math.isfinite(spec.a) or spec.a < 0:
        raise NegativeCoupling(f"coupling a must be nonnegative, got {spec.a}")
    spec.confinement.check()
    g = spec.geometry
    if not g.R > 0 or g.points < 4 or g.padding_factor < 2 or g.lmax < 0:
        raise SpecError(f"invalid geometry {g}")
    if spec.mode not in ("cartesian", "radial"):
        raise SpecError(f"mode must be 'cartesian' or 'radial', got {spec.mode!r}")
    if spec.mode == "cartesian" and n != 3:
        raise SpecError("cartesian mode is three-dimensional; use mode='radial' for n != 3")
    if spec.mode == "cartesian" and g.points % 2:
        raise SpecError("cartesian grids need an even number of points per axis")
    if spec.potential_domain not in ("freespace", "ball"):
        raise SpecError(f"unknown potential_domain {spec.potential_domain!r}")
    if spec.potential_domain == "ball" and alpha != 2.0:
        raise SpecError("ball truncation is only implemented for alpha = 2")
    return dataclasses.replace(spec, n=n, alpha=alpha, beta=beta, a=float(spec.a))


_SPEC_KEYS = {
    "n", "alpha", "k", "beta", "a", "confinement", "geometry",
    "mode", "potential_domain", "exploratory",
}
_REQUIRED = {"n", "alpha", "k", "beta", "a"}
_GEOM_KEYS = {"R", "points", "lmax", "padding_factor"}


def _need(cond, msg):
    if not cond:
        raise ConfigParseError(msg)


def _number(d, key, where):
    v = d[key]
    _need(isinstance(v, (int, float)) and not isinstance(v, bool), f"{where}.{key} must be a number")
    return v


def _integer(d, key, where):
    v = d[key]
    _need(isinstance(v, int) and not isinstance(v, bool), f"{where}.{key} must be an integer")
    return v


def spec_from_dict(d) -> ProblemSpec:
    """Strictly parse the JSON layout.  Unknown or missing keys raise ConfigParseError."""
    _need(isinstance(d, dict), "config must be a JSON object")
    unknown = set(d) - _SPEC_KEYS
    _need(not unknown, f"unknown config keys: {sorted(unknown)}")
    missing = _REQUIRED - set(d)
    _need(not missing, f"missing config keys: {sorted(missing)}")
    beta = d["beta"]
    _need(isinstance(beta, list) and all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in beta),
          "beta must be a list of numbers")
    kwargs = dict(
        n=_integer(d, "n", "config"),
        alpha=float(_number(d, "alpha", "config")),
        k=_integer(d, "k", "config"),
        beta=tuple(float(b) for b in beta),
        a=float(_number(d, "a", "config")),
    )
    if "confinement" in d:
        c = d["confinement"]
        _need(isinstance(c, dict) and "family" in c, "confinement must be an object with a family")
        fam = c["family"]
        if fam == "power":
            _need(set(c) <= {"family", "exponent"}, f"unknown confinement keys: {sorted(set(c) - {'family', 'exponent'})}")
            kwargs["confinement"] = Confinement("power", float(_number(c, "exponent", "confinement")) if "exponent" in c else 2.0)
        elif fam == "well":
            _need(set(c) <= {"family", "coefficients"}, f"unknown confinement keys: {sorted(set(c) - {'family', 'coefficients'})}")
            coef = c.get("coefficients")
            _need(isinstance(coef, list) and all(isinstance(x, (int, float)) for x in coef), "well coefficients must be a list")
            kwargs["confinement"] = Confinement("well", coefficients=tuple(float(x) for x in coef))
        else:
            raise ConfigParseError(f"unknown confinement family {fam!r}")
    if "geometry" in d:
        g = d["geometry"]
        _need(isinstance(g, dict), "geometry must be an object")
        unknown = set(g) - _GEOM_KEYS
        _need(not unknown, f"unknown geometry keys: {sorted(unknown)}")
        _need({"R", "points"} <= set(g), "geometry needs R and points")
        kwargs["geometry"] = GridSpec(
            R=float(_number(g, "R", "geometry")),
            points=_integer(g, "points", "geometry"),
            lmax=_integer(g, "lmax", "geometry") if "lmax" in g else 0,
            padding_factor=_integer(g, "padding_factor", "geometry") if "padding_factor" in g else 2,
        )
    for key in ("mode", "potential_domain"):
        if key in d:
            _need(isinstance(d[key], str), f"{key} must be a string")
            kwargs[key] = d[key]
    if "exploratory" in d:
        _need(isinstance(d["exploratory"], bool), "exploratory must be a boolean")
        kwargs["exploratory"] = d["exploratory"]
    return ProblemSpec(**kwargs)


def spec_from_json(text: str) -> ProblemSpec:
    """Parse and validate a JSON config document."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"invalid JSON: {exc}") from exc
    return validate_spec(spec_from_dict(d))


# ---------------------------------------------------------------- grids


@dataclass(frozen=True, eq=False)
class CartesianGrid:
    """Uniform node grid ``x_i = -R + i h``, ``h = 2R/N``, on ``[-R, R)^3``.

    The origin is a node (``i = N/2``).  Quadrature weights are ``h**3`` so that
    they sum to the box volume ``(2R)**3``.
    """

    R: float
    N: int
    padding_factor: int = 2
    kind: ClassVar[str] = "cartesian"
    n: ClassVar[int] = 3

    @cached_property
    def h(self) -> float:
        return 2.0 * self.R / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return -self.R + self.h * np.arange(self.N)

    @property
    def shape(self):
        return (self.N,) * 3

    @property
    def size(self) -> int:
        return self.N**3

    @cached_property
    def cell_volume(self) -> float:
        return self.h**3

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.shape, self.cell_volume)

    @cached_property
    def radius(self) -> np.ndarray:
        x = self.x
        return np.sqrt(x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2)

    def coords(self):
        return np.meshgrid(self.x, self.x, self.x, indexing="ij")

    @property
    def volume(self) -> float:
        return (2.0 * self.R) ** 3

    def integrate(self, f) -> float:
        return float(self.cell_volume * np.sum(f))

    def inner(self, f, g) -> float:
        return float(self.cell_volume * np.vdot(f, g).real)

    def norm(self, f) -> float:
        return math.sqrt(self.inner(f, f))

    def describe(self) -> dict:
        return {"kind": "cartesian", "R": float(self.R), "N": int(self.N),
                "padding_factor": int(self.padding_factor)}


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Cell-centred radial grid ``r_i = (i + 1/2) h`` on ``[0, R]`` in R^n.

    Weights are exact shell volumes, so they sum to the ball volume.
    """

    n: int
    R: float
    M: int
    lmax: int = 0
    padding_factor: int = 2
    kind: ClassVar[str] = "radial"

    @cached_property
    def h(self) -> float:
        return self.R / self.M

    @cached_property
    def edges(self) -> np.ndarray:
        return self.h * np.arange(self.M + 1)

    @cached_property
    def r(self) -> np.ndarray:
        return self.h * (np.arange(self.M) + 0.5)

    @property
    def radius(self) -> np.ndarray:
        return self.r

    @property
    def shape(self):
        return (self.M,)

    @property
    def size(self) -> int:
        return self.M

    @cached_property
    def sphere(self) -> float:
        return sphere_area(self.n)

    @cached_property
    def weights(self) -> np.ndarray:
        e = self.edges
        return self.sphere * (e[1:] ** self.n - e[:-1] ** self.n) / self.n

    @property
    def volume(self) -> float:
        return self.sphere * self.R**self.n / self.n

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f))

    def inner(self, f, g) -> float:
        return float(np.dot(self.weights * f, g))

    def norm(self, f) -> float:
        return math.sqrt(self.inner(f, f))

    def describe(self) -> dict:
        return {"kind": "radial", "n": int(self.n), "R": float(self.R), "M": int(self.M),
                "lmax": int(self.lmax), "padding_factor": int(self.padding_factor)}


Grid = CartesianGrid | RadialGrid


def grid_from_description(d: dict) -> Grid:
    if d["kind"] == "cartesian":
        return CartesianGrid(d["R"], d["N"], d["padding_factor"])
    return RadialGrid(d["n"], d["R"], d["M"], d["lmax"], d["padding_factor"])


def estimate_memory(spec: ProblemSpec) -> int:
    """Rough peak working-set estimate in bytes."""
    g = spec.geometry
    if spec.mode == "radial":
        m = g.points
        dense = m * m * 8 * 3 if (spec.n, spec.alpha) == (3, 1.0) else 0
        return 64 * m * 8 * (spec.k + 8) + dense
    nodes = g.points**3
    padded = (g.padding_factor * g.points) ** 3
    return nodes * 8 * (4 * spec.k + 40) + padded * 16 * 4


def make_grid(spec: ProblemSpec, mem_cap: int | None = None) -> Grid:
    """Build the grid described by ``spec``.

    Raises
    ------
    OutOfMemoryBudget
        If the estimated working set exceeds ``mem_cap`` bytes.
    """
    cap = DEFAULT_MEM_CAP if mem_cap is None else mem_cap
    need = estimate_memory(spec)
    if need > cap:
        raise OutOfMemoryBudget(f"estimated {need} bytes exceeds the {cap}-byte budget")
    g = spec.geometry
    if spec.mode == "radial":
        return RadialGrid(spec.n, float(g.R), int(g.points), int(g.lmax), int(g.padding_factor))
    return CartesianGrid(float(g.R), int(g.points), int(g.padding_factor))


# ---------------------------------------------------------------- fields


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Samples of a scalar function on a grid.

    ``source`` optionally caches the discrete fractional Laplacian of a potential
    with respect to the operator identified by ``source_tag``.  Solvers attach
    it so that quadratic forms stay exactly consistent with the Riesz map.
    """

    grid: Grid
    values: np.ndarray
    role: str = "potential"
    source: np.ndarray | None = None
    source_tag: tuple | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridMismatch(f"values of shape {vals.shape} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field samples must be finite")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "density" and vals.min() < -1e-10:
            raise NegativeDensity(f"density has negative sample {vals.min():.3g}")
        object.__setattr__(self, "values", vals)

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def with_values(self, values, role=None) -> ScalarField:
        return ScalarField(self.grid, values, role or self.role)


def same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid is not g:
            raise GridMismatch("fields live on different grids")
    return g


@lru_cache(maxsize=64)
def _confinement_values(conf: Confinement, grid) -> np.ndarray:
    w = conf.evaluate(grid.radius)
    w.setflags(write=False)
    return w


def eval_confinement(spec: ProblemSpec, grid: Grid) -> ScalarField:
    """Sample the confining potential ``W`` on ``grid``."""
    spec.confinement.check()
    return ScalarField(grid, _confinement_values(spec.confinement, grid), role="confinement")


def zero_field(grid: Grid, role="potential") -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape), role=role)
