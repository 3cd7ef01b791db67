"""
Boundary data for the biharmonic problem and Dirichlet values of v = Δu on
corners and edges.

Every side carries u = g_D. A side of the first kind also carries the outward
normal derivative g_N; a side of the second kind carries g_L = Δu. Scalar
fields are callables of the coordinate arrays, ``g(x, y)`` or ``g(x, y, z)``,
evaluated elementwise.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .grid import UniformGrid, canonical_side, parse_side, sides_for
from .utils import ConfigurationError

logger = logging.getLogger(__name__)

Field = Callable[..., np.ndarray]

FIRST_KIND = "first"
SECOND_KIND = "second"

# Second derivative weights, exact for polynomials of degree <= 5.
CENTRED_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
ONE_SIDED_D2 = np.array([15 / 4, -77 / 6, 107 / 6, -13.0, 61 / 12, -5 / 6])

CORNER_MISMATCH_RTOL = 1e-8


@dataclass(frozen=True)
class SideCondition:
    kind: str
    g_D: Optional[Field]
    g_N: Optional[Field] = None
    g_L: Optional[Field] = None

    def __post_init__(self):
        if self.kind == FIRST_KIND:
            if self.g_N is None or self.g_L is not None:
                raise ConfigurationError("A first-kind side needs g_N and no g_L.")
        elif self.kind == SECOND_KIND:
            if self.g_L is None or self.g_N is not None:
                raise ConfigurationError("A second-kind side needs g_L and no g_N.")
        else:
            raise ConfigurationError(f"Unknown boundary kind '{self.kind}'.")


def first_kind(g_D: Field, g_N: Field) -> SideCondition:
    """u = g_D and outward normal derivative = g_N."""
    return SideCondition(FIRST_KIND, g_D, g_N=g_N)


def second_kind(g_D: Field, g_L: Field) -> SideCondition:
    """u = g_D and Δu = g_L."""
    return SideCondition(SECOND_KIND, g_D, g_L=g_L)


@dataclass
class BoundarySpec:
    """
    Per-side conditions for a box in ``dim`` dimensions.

    Parameters:
        dim (int): Spatial dimension.
        sides (Dict[str, SideCondition]): Condition for every side id (2D aliases accepted).
        exact_v (Optional[Field]): Δu evaluator used on corners and edges when supplied.

    Raises:
        ConfigurationError: If a side is missing or unknown.
    """

    dim: int
    sides: Dict[str, SideCondition]
    exact_v: Optional[Field] = None

    def __post_init__(self):
        resolved = {}
        for side, condition in self.sides.items():
            try:
                resolved[canonical_side(side, self.dim)] = condition
            except ValueError as exc:
                raise ConfigurationError(str(exc)) from exc
        missing = [s for s in sides_for(self.dim) if s not in resolved]
        if missing:
            raise ConfigurationError(f"No boundary condition given for sides {missing}.")
        self.sides = resolved

    def kind(self, side: str) -> str:
        return self.sides[canonical_side(side, self.dim)].kind

    def first_kind_sides(self) -> Tuple[str, ...]:
        return tuple(s for s in sides_for(self.dim) if self.sides[s].kind == FIRST_KIND)

    def second_kind_sides(self) -> Tuple[str, ...]:
        return tuple(s for s in sides_for(self.dim) if self.sides[s].kind == SECOND_KIND)


@dataclass
class ProblemSpec:
    """
    A biharmonic problem Δ²u = f on a box.

    f must be evaluable on the whole closed box: the boundary closure uses f at
    boundary nodes. exact_u and exact_v are optional and only used to measure errors.
    """

    f: Field
    boundary: BoundarySpec
    exact_u: Optional[Field] = None
    exact_v: Optional[Field] = None
    name: str = "problem"
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.boundary.dim


def normal_projection(gradient: Callable[..., Sequence[np.ndarray]], side: str, dim: int) -> Field:
    """
    Outward normal derivative on a side from a gradient evaluator.

    On a lower side the outward normal points to -axis, so g_N = -u_axis there;
    on an upper side g_N = +u_axis. This is the only place the sign is decided.

    Parameters:
        gradient (Callable): Returns the gradient components at the given coordinates.
        side (str): Side id.
        dim (int): Spatial dimension.

    Returns:
        Field: The g_N evaluator for that side.
    """
    axis, upper = parse_side(side, dim)
    sign = 1.0 if upper else -1.0

    def g_N(*coords):
        return sign * np.asarray(gradient(*coords)[axis])

    return g_N


def numeric_tangential_d2(samples: Sequence[float], spacing: float, position: str = "interior") -> float:
    """
    Fourth-order second derivative from equally spaced samples.

    Parameters:
        samples (Sequence[float]): Function samples. For "interior" the point is the
            middle sample (5-point centred formula); for "endpoint" it is samples[0]
            and the next five samples go away from it (6-point one-sided formula).
        spacing (float): Sample spacing.
        position (str): "interior" or "endpoint".

    Returns:
        float: The second derivative estimate.

    Raises:
        ValueError: If too few samples are given or position is unknown.
    """
    samples = np.asarray(samples, dtype=float)
    if position == "interior":
        if samples.size < 5:
            raise ValueError(f"Centred differentiation needs 5 samples, got {samples.size}.")
        c = samples.size // 2
        window = samples[c - 2:c + 3]
        if window.size < 5:
            raise ValueError("The middle sample needs two neighbours on each side.")
        return float(CENTRED_D2 @ window) / spacing ** 2
    if position == "endpoint":
        if samples.size < 6:
            raise ValueError(f"One-sided differentiation needs 6 samples, got {samples.size}.")
        return float(ONE_SIDED_D2 @ samples[:6]) / spacing ** 2
    raise ValueError(f"Unknown position '{position}'.")


def _d2_along(func: Field, point: Tuple[float, ...], axis: int, grid: UniformGrid, refine: int = 1) -> float:
    lo, hi = grid.lo[axis], grid.hi[axis]
    step = min(grid.h, (hi - lo) / 5) / refine
    slack = 1e-12 * (hi - lo)
    t = point[axis]
    if t - 2 * step >= lo - slack and t + 2 * step <= hi + slack:
        ts, position = t + step * np.arange(-2, 3), "interior"
    elif t - lo <= hi - t:
        ts, position = t + step * np.arange(6), "endpoint"
    else:
        ts, position = t - step * np.arange(6), "endpoint"
    coords = [np.full(ts.shape, p) for p in point]
    coords[axis] = ts
    samples = np.broadcast_to(np.asarray(func(*coords), dtype=float), ts.shape)
    return numeric_tangential_d2(samples, step, position)


def _tangential_v(spec: BoundarySpec, grid: UniformGrid, sides: Sequence[str], point, refine: int = 1) -> float:
    """Δu from second derivatives of g_D along the sides meeting at a corner or edge."""
    for side in sides:
        if spec.sides[side].g_D is None:
            raise ConfigurationError(f"Side {side} has no g_D to differentiate.")
    total = 0.0
    for axis in range(grid.dim):
        # Any side whose plane contains this axis direction; the shared edge
        # direction is taken once, from the first such side.
        host = next(s for s in sides if parse_side(s, grid.dim)[0] != axis)
        total += _d2_along(spec.sides[host].g_D, point, axis, grid, refine)
    return total


def dirichlet_v(spec: BoundarySpec, grid: UniformGrid, idx: Sequence[int]) -> float:
    """
    Value of v = Δu at a corner or edge node.

    g_L of an adjacent second-kind side wins; otherwise exact_v when supplied;
    otherwise second derivatives of g_D along the adjacent sides. When g_L is
    used, a warning is logged if it differs from exact_v by more than 1e-8
    relative, or from the numeric construction by more than that construction's
    own error estimate (the change between step and step/2).

    Raises:
        ValueError: If the node is not a corner or edge node.
        ConfigurationError: If the construction needs g_D that is missing.
    """
    node_class = grid.classify(idx)
    if node_class.kind not in ("corner", "edge"):
        raise ValueError(f"Node {tuple(idx)} is a {node_class.kind} node, not a corner or edge.")
    point = grid.node_coords(idx)
    second = [s for s in node_class.sides if spec.sides[s].kind == SECOND_KIND]

    def derived() -> float:
        if spec.exact_v is not None:
            return float(np.asarray(spec.exact_v(*point)))
        return _tangential_v(spec, grid, node_class.sides, point)

    if not second:
        return derived()

    value = float(np.asarray(spec.sides[second[0]].g_L(*point)))
    if spec.exact_v is not None:
        other = derived()
        slack = 0.0
    elif all(spec.sides[s].g_D is not None for s in node_class.sides):
        coarse = _tangential_v(spec, grid, node_class.sides, point)
        other = _tangential_v(spec, grid, node_class.sides, point, refine=2)
        # halving the step cuts the O(step^4) error 16-fold, so |coarse - other| bounds it
        slack = 2.0 * abs(coarse - other)
    else:
        return value
    scale = max(abs(value), abs(other), 1.0)
    if abs(value - other) > CORNER_MISMATCH_RTOL * scale + slack:
        logger.warning(
            "g_L=%.12g and derived Δu=%.12g disagree at node %s; using g_L.",
            value, other, tuple(idx),
        )
    return value


def _corner_index(grid: UniformGrid, sides: Sequence[str]) -> Tuple[int, ...]:
    idx = [None] * grid.dim
    for side in sides:
        axis, upper = parse_side(side, grid.dim)
        idx[axis] = grid.n[axis] if upper else 0
    return tuple(idx)


def corner_v_2d(spec: BoundarySpec, grid: UniformGrid, corner: Sequence[str]) -> float:
    """
    v = Δu at a corner of a 2D box.

    Parameters:
        spec (BoundarySpec): Boundary data.
        grid (UniformGrid): 2D grid.
        corner (Sequence[str]): The two sides meeting at the corner, e.g. ("x-", "y-").

    Returns:
        float: v at the corner.
    """
    if grid.dim != 2 or len(corner) != 2:
        raise ValueError("corner_v_2d needs a 2D grid and a pair of sides.")
    idx = _corner_index(grid, corner)
    if any(i is None for i in idx):
        raise ValueError(f"Sides {tuple(corner)} do not meet at a corner.")
    return dirichlet_v(spec, grid, idx)


def edge_v_3d(spec: BoundarySpec, grid: UniformGrid, edge: Sequence[str], node: Sequence[int]) -> float:
    """
    v = Δu at a node on an edge of a 3D box.

    Parameters:
        spec (BoundarySpec): Boundary data.
        grid (UniformGrid): 3D grid.
        edge (Sequence[str]): The two faces meeting at the edge, e.g. ("x-", "y-").
        node (Sequence[int]): Multi-index of a node on that edge.

    Returns:
        float: v at the node.
    """
    if grid.dim != 3 or len(edge) != 2:
        raise ValueError("edge_v_3d needs a 3D grid and a pair of faces.")
    node_class = grid.classify(node)
    wanted = {canonical_side(s, 3) for s in edge}
    if not wanted.issubset(node_class.sides):
        raise ValueError(f"Node {tuple(node)} is not on edge {tuple(edge)}.")
    return dirichlet_v(spec, grid, node)
