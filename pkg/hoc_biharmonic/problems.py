"""
Manufactured biharmonic problems and the Stokes cavity.

Each manufactured problem carries closed-form u, ∇u, Δu and f = Δ²u on the
unit box; boundary data for any layout of first- and second-kind sides are
generated from them.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P

from .boundary import (
    FIRST_KIND,
    SECOND_KIND,
    BoundarySpec,
    ProblemSpec,
    first_kind,
    normal_projection,
    second_kind,
)
from .grid import canonical_side, sides_for
from .utils import ConfigurationError, validate_dim

logger = logging.getLogger(__name__)

Layout = Union[str, Mapping[str, str]]

# Sixth-order centred second derivative weights.
D2_SIXTH = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])


@dataclass
class ManufacturedProblem:
    """
    Closed-form solution of Δ²u = f on [lo, hi]^dim.

    gradient returns a tuple of dim arrays; the other evaluators return one array.
    """

    name: str
    dim: int
    u: Callable[..., np.ndarray]
    gradient: Callable[..., Tuple[np.ndarray, ...]]
    laplacian: Callable[..., np.ndarray]
    f: Callable[..., np.ndarray]
    params: Dict[str, float] = field(default_factory=dict)
    lo: float = 0.0
    hi: float = 1.0

    def boundary(self, layout: Layout = "first") -> BoundarySpec:
        return boundary_layout(self, layout)

    def to_problem(self, layout: Layout = "first") -> ProblemSpec:
        return ProblemSpec(
            f=self.f,
            boundary=self.boundary(layout),
            exact_u=self.u,
            exact_v=self.laplacian,
            name=self.name,
            metadata={"params": dict(self.params), "layout": layout_name(layout)},
        )


def resolve_layout(layout: Layout, dim: int) -> Dict[str, str]:
    """
    Per-side kinds for a layout.

    "first" and "second" apply one kind everywhere; "mixed" puts the second
    kind on x- and the first kind elsewhere; a mapping gives every side
    explicitly (2D aliases allowed).
    """
    sides = sides_for(dim)
    if isinstance(layout, str):
        if layout in (FIRST_KIND, SECOND_KIND):
            return {s: layout for s in sides}
        if layout == "mixed":
            return {s: SECOND_KIND if s == "x-" else FIRST_KIND for s in sides}
        raise ConfigurationError(f"Unknown boundary layout '{layout}'.")
    kinds = {}
    for side, kind in layout.items():
        try:
            side = canonical_side(side, dim)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if kind not in (FIRST_KIND, SECOND_KIND):
            raise ConfigurationError(f"Side {side}: unknown kind '{kind}'.")
        kinds[side] = kind
    missing = [s for s in sides if s not in kinds]
    if missing:
        raise ConfigurationError(f"Boundary layout leaves sides {missing} unset.")
    return kinds


def layout_name(layout: Layout) -> str:
    if isinstance(layout, str):
        return layout
    return ",".join(f"{side}:{kind}" for side, kind in sorted(layout.items()))


def boundary_layout(problem: ManufacturedProblem, layout: Layout = "first") -> BoundarySpec:
    """Boundary data restricted from the exact fields for a layout of side kinds."""
    kinds = resolve_layout(layout, problem.dim)
    sides = {}
    for side, kind in kinds.items():
        if kind == FIRST_KIND:
            sides[side] = first_kind(problem.u, normal_projection(problem.gradient, side, problem.dim))
        else:
            sides[side] = second_kind(problem.u, problem.laplacian)
    return BoundarySpec(problem.dim, sides)


def example_smooth_2d() -> ManufacturedProblem:
    """u = x² + y² - x eˣ cos y, with f = 0."""

    def u(x, y):
        return x ** 2 + y ** 2 - x * np.exp(x) * np.cos(y)

    def gradient(x, y):
        ex = np.exp(x)
        return (
            2 * x - ex * np.cos(y) - x * ex * np.cos(y),
            2 * y + x * ex * np.sin(y),
        )

    def laplacian(x, y):
        return 4 - 2 * np.exp(x) * np.cos(y)

    def f(x, y):
        return np.zeros(np.broadcast(x, y).shape)

    return ManufacturedProblem("smooth_2d", 2, u, gradient, laplacian, f)


def _check_wavenumbers(**ks):
    for name, k in ks.items():
        if not k > 0:
            raise ValueError(f"{name} must be positive, got {k}.")


def example_osc_2d(k1: float = 25.0, k2: float = 5.0) -> ManufacturedProblem:
    """u = sin(k1 x) cos(k2 y)."""
    _check_wavenumbers(k1=k1, k2=k2)
    lam = k1 ** 2 + k2 ** 2

    def u(x, y):
        return np.sin(k1 * x) * np.cos(k2 * y)

    def gradient(x, y):
        return (
            k1 * np.cos(k1 * x) * np.cos(k2 * y),
            -k2 * np.sin(k1 * x) * np.sin(k2 * y),
        )

    def laplacian(x, y):
        return -lam * u(x, y)

    def f(x, y):
        return lam ** 2 * u(x, y)

    return ManufacturedProblem("osc_2d", 2, u, gradient, laplacian, f, {"k1": k1, "k2": k2})


def example_smooth_3d() -> ManufacturedProblem:
    """u = xyz log(x + y + z + 1)."""

    def u(x, y, z):
        return x * y * z * np.log(x + y + z + 1)

    def gradient(x, y, z):
        s = x + y + z + 1
        log_s = np.log(s)
        xyz = x * y * z
        return (y * z * log_s + xyz / s, x * z * log_s + xyz / s, x * y * log_s + xyz / s)

    def laplacian(x, y, z):
        s = x + y + z + 1
        return 2 * (x * y + y * z + z * x) / s - 3 * x * y * z / s ** 2

    def f(x, y, z):
        s = x + y + z + 1
        return -8 * (x + y + z) / s ** 2 + 24 * (x * y + y * z + z * x) / s ** 3 - 54 * x * y * z / s ** 4

    return ManufacturedProblem("smooth_3d", 3, u, gradient, laplacian, f)


def example_osc_3d(k1: float = 25.0, k2: float = 5.0, k3: float = 25.0) -> ManufacturedProblem:
    """u = sin(k1 x) cos(k2 y) sin(k3 z)."""
    _check_wavenumbers(k1=k1, k2=k2, k3=k3)
    lam = k1 ** 2 + k2 ** 2 + k3 ** 2

    def u(x, y, z):
        return np.sin(k1 * x) * np.cos(k2 * y) * np.sin(k3 * z)

    def gradient(x, y, z):
        return (
            k1 * np.cos(k1 * x) * np.cos(k2 * y) * np.sin(k3 * z),
            -k2 * np.sin(k1 * x) * np.sin(k2 * y) * np.sin(k3 * z),
            k3 * np.sin(k1 * x) * np.cos(k2 * y) * np.cos(k3 * z),
        )

    def laplacian(x, y, z):
        return -lam * u(x, y, z)

    def f(x, y, z):
        return lam ** 2 * u(x, y, z)

    return ManufacturedProblem("osc_3d", 3, u, gradient, laplacian, f, {"k1": k1, "k2": k2, "k3": k3})


def _polyval(c: np.ndarray):
    if c.ndim == 2:
        return lambda x, y: P.polyval2d(x, y, c)
    return lambda x, y, z: P.polyval3d(x, y, z, c)


def _derivative(c: np.ndarray, axis: int, order: int) -> np.ndarray:
    """Derivative coefficients padded back to the shape of c."""
    d = P.polyder(c, m=order, axis=axis)
    padded = np.zeros_like(c)
    padded[tuple(slice(0, s) for s in d.shape)] = d
    return padded


def polynomial_problem(terms: Union[Mapping[Tuple[int, ...], float], Sequence], dim: int = 2,
                       name: str = "polynomial") -> ManufacturedProblem:
    """
    Manufactured polynomial u = Σ c·x^a y^b [z^c].

    Parameters:
        terms: Mapping from exponent tuples to coefficients, or a sequence of
            (exponents, coefficient) pairs.
        dim (int): 2 or 3.

    Returns:
        ManufacturedProblem: With exact polynomial derivatives.
    """
    validate_dim(dim)
    items = list(terms.items()) if isinstance(terms, Mapping) else [(tuple(e), c) for e, c in terms]
    if not items:
        raise ValueError("A polynomial needs at least one term.")
    degree = max(sum(e) for e, _ in items)
    c = np.zeros((degree + 1,) * dim)
    for exponent, coefficient in items:
        exponent = tuple(int(p) for p in exponent)
        if len(exponent) != dim or min(exponent) < 0:
            raise ValueError(f"Exponent {exponent} does not fit a {dim}D monomial.")
        c[exponent] += float(coefficient)

    lap = sum(_derivative(c, a, 2) for a in range(dim))
    bilap = sum(_derivative(lap, a, 2) for a in range(dim))
    grads = [_derivative(c, a, 1) for a in range(dim)]
    u, laplacian, bilaplacian = _polyval(c), _polyval(lap), _polyval(bilap)
    grad_evals = [_polyval(g) for g in grads]

    def gradient(*coords):
        return tuple(g(*coords) for g in grad_evals)

    def f(*coords):
        return np.broadcast_to(bilaplacian(*coords), np.broadcast(*coords).shape)

    params = {"terms": [[list(e), float(v)] for e, v in items]}
    return ManufacturedProblem(name, dim, u, gradient, laplacian, f, params)


def stokes_cavity(lid_speed: float = 1.0) -> ProblemSpec:
    """
    Stream-function form of the modified lid-driven cavity on [0, 1]².

    u = 0 on every side. The velocity (-u_y, u_x) vanishes on x = 0, x = 1 and
    y = 0 and equals (lid_speed·x⁶(x-1)⁶, 0) on y = 1, so the outward normal
    derivative there is u_y = -lid_speed·x⁶(x-1)⁶.
    """

    def zero(x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def lid(x, y):
        return -lid_speed * x ** 6 * (x - 1) ** 6 + 0 * y

    sides = {side: first_kind(zero, zero) for side in ("x-", "x+", "y-")}
    sides["y+"] = first_kind(zero, lid)
    return ProblemSpec(
        f=zero,
        boundary=BoundarySpec(2, sides),
        name="stokes_cavity",
        metadata={"params": {"lid_speed": lid_speed}, "layout": FIRST_KIND},
    )


def _as_terms(params: Mapping[str, object]):
    terms = params.get("terms")
    if terms is None:
        raise ConfigurationError("The polynomial problem needs 'terms'.")
    if isinstance(terms, Mapping):
        return [(tuple(int(p) for p in str(k).split(",")), v) for k, v in terms.items()]
    return terms


PROBLEMS = {
    "smooth_2d": example_smooth_2d,
    "osc_2d": example_osc_2d,
    "smooth_3d": example_smooth_3d,
    "osc_3d": example_osc_3d,
}


def get_problem(name: str, params: Optional[Mapping[str, object]] = None) -> ManufacturedProblem:
    """
    Looks up a manufactured problem by registry name.

    Raises:
        ConfigurationError: For an unknown name or bad parameters.
    """
    params = dict(params or {})
    if name == "polynomial":
        dim = int(params.pop("dim", 2))
        return polynomial_problem(_as_terms(params), dim)
    if name not in PROBLEMS:
        raise ConfigurationError(f"Unknown problem '{name}'; choose from {sorted(PROBLEMS) + ['polynomial']}.")
    try:
        return PROBLEMS[name](**params)
    except TypeError as exc:
        raise ConfigurationError(f"Bad parameters for {name}: {exc}") from exc


@dataclass
class LoadCheck:
    max_error: float
    atol: float
    points: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.atol


def _fd_d2(func, coords, axis, delta):
    total = 0.0
    for shift, weight in zip(range(-3, 4), D2_SIXTH):
        moved = list(coords)
        moved[axis] = coords[axis] + shift * delta
        total = total + weight * func(*moved)
    return total / delta ** 2


def fd_bilaplacian(func: Callable[..., np.ndarray], coords: Sequence[np.ndarray], delta: float) -> np.ndarray:
    """Δ² by nesting sixth-order centred second differences."""
    dim = len(coords)
    total = 0.0
    for a in range(dim):
        for b in range(dim):
            total = total + _fd_d2(lambda *p: _fd_d2(func, p, b, delta), coords, a, delta)
    return total


def check_load(problem: ManufacturedProblem, points: int = 100, seed: int = 0,
               rtol: float = 1e-5) -> LoadCheck:
    """
    Compares f with a finite-difference Δ²u at random points of the box.

    The step is 0.02 / max(1, largest wavenumber); the tolerance is
    rtol·max(1, max|f|) over the sample.
    """
    rng = np.random.default_rng(seed)
    coords = [rng.uniform(problem.lo, problem.hi, points) for _ in range(problem.dim)]
    wavenumbers = [v for k, v in problem.params.items() if k.startswith("k")]
    delta = 0.02 / max(1.0, *wavenumbers) if wavenumbers else 0.02
    exact = np.asarray(problem.f(*coords), dtype=float)
    approx = fd_bilaplacian(problem.u, coords, delta)
    atol = rtol * max(1.0, float(np.abs(exact).max()))
    check = LoadCheck(float(np.abs(exact - approx).max()), atol, points)
    if not check.passed:
        logger.error("Load check failed for %s: max error %.3e > %.3e.", problem.name, check.max_error, atol)
    return check
