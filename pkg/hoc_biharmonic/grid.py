"""
Uniform node-centred tensor-product grids on boxes in 2D and 3D.

Nodes are numbered lexicographically with x fastest, so a field stored as a
flat vector reshapes to an ``(n_x+1, n_y+1[, n_z+1])`` array with
``order="F"``.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .utils import validate_dim, validate_index

AXIS_NAMES = ("x", "y", "z")

# 2D aliases only; 3D callers use the axis names.
SIDE_ALIASES = {"left": "x-", "right": "x+", "bottom": "y-", "top": "y+"}


def sides_for(dim: int) -> Tuple[str, ...]:
    """Side ids of a box in the given dimension, ordered by axis then lo/hi."""
    validate_dim(dim)
    return tuple(f"{AXIS_NAMES[a]}{s}" for a in range(dim) for s in "-+")


def parse_side(side: str, dim: int) -> Tuple[int, bool]:
    """
    Resolves a side id (or 2D alias) to its normal axis and whether it is the upper end.

    Parameters:
        side (str): Side id such as "x-", "z+", or a 2D alias such as "top".
        dim (int): Spatial dimension.

    Returns:
        Tuple[int, bool]: (axis, is_upper).

    Raises:
        ValueError: If the side id is unknown for this dimension.
    """
    canonical = SIDE_ALIASES.get(side, side) if dim == 2 else side
    if canonical not in sides_for(dim):
        raise ValueError(f"Unknown side '{side}' for a {dim}D box.")
    return AXIS_NAMES.index(canonical[0]), canonical[1] == "+"


def canonical_side(side: str, dim: int) -> str:
    axis, upper = parse_side(side, dim)
    return f"{AXIS_NAMES[axis]}{'+' if upper else '-'}"


@dataclass(frozen=True)
class NodeClass:
    """
    Classification of a grid node.

    kind is one of "interior", "face", "edge" (3D only) or "corner"; sides lists
    the side ids the node lies on, ordered by axis. A face node has one side,
    an edge node two, a corner node ``dim`` sides. Edge and corner ids are
    these side tuples, e.g. ("x-", "y-").
    """

    kind: str
    sides: Tuple[str, ...] = ()


INTERIOR = NodeClass("interior")


@dataclass(frozen=True)
class UniformGrid:
    """
    Uniform grid with spacing h identical on every axis.

    Parameters:
        lo (Sequence[float]): Lower corner of the box.
        hi (Sequence[float]): Upper corner of the box.
        n (Sequence[int]): Cells per axis, each >= 2.
    """

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    n: Tuple[int, ...]
    dim: int = field(init=False)
    h: float = field(init=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        n = tuple(int(v) for v in self.n)
        if not len(lo) == len(hi) == len(n):
            raise ValueError("lo, hi and n must have the same length.")
        dim = validate_dim(len(n))
        if min(n) < 2:
            raise ValueError(f"Every axis needs at least 2 cells, got n={n}.")
        spacings = [(b - a) / m for a, b, m in zip(lo, hi, n)]
        if min(spacings) <= 0:
            raise ValueError("hi must exceed lo on every axis.")
        h = spacings[0]
        for axis, ha in enumerate(spacings):
            if abs(ha - h) > np.spacing(h):
                raise ValueError(
                    f"Spacing on axis {AXIS_NAMES[axis]} ({ha!r}) differs from h={h!r}; "
                    "the scheme needs a single spacing."
                )
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "h", h)

    @classmethod
    def cube(cls, dim: int, n: int, lo: float = 0.0, hi: float = 1.0) -> "UniformGrid":
        """Grid on [lo, hi]^dim with n cells per axis."""
        validate_dim(dim)
        return cls((lo,) * dim, (hi,) * dim, (n,) * dim)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(m + 1 for m in self.n)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def strides(self) -> Tuple[int, ...]:
        strides = [1]
        for m in self.shape[:-1]:
            strides.append(strides[-1] * m)
        return tuple(strides)

    @property
    def sides(self) -> Tuple[str, ...]:
        return sides_for(self.dim)

    def classify(self, idx: Sequence[int]) -> NodeClass:
        idx = validate_index(idx, self.n)
        sides = []
        for axis, (i, m) in enumerate(zip(idx, self.n)):
            if i == 0:
                sides.append(f"{AXIS_NAMES[axis]}-")
            elif i == m:
                sides.append(f"{AXIS_NAMES[axis]}+")
        if not sides:
            return INTERIOR
        if len(sides) == 1:
            return NodeClass("face", tuple(sides))
        if len(sides) == self.dim:
            return NodeClass("corner", tuple(sides))
        return NodeClass("edge", tuple(sides))

    def node_coords(self, idx: Sequence[int]) -> Tuple[float, ...]:
        idx = validate_index(idx, self.n)
        return tuple(a + i * self.h for a, i in zip(self.lo, idx))

    def lex_index(self, idx: Sequence[int]) -> int:
        idx = validate_index(idx, self.n)
        return int(sum(i * s for i, s in zip(idx, self.strides)))

    def unravel(self, flat: int) -> Tuple[int, ...]:
        """Inverse of lex_index."""
        flat = int(flat)
        if not 0 <= flat < self.num_nodes:
            raise ValueError(f"flat index {flat} outside [0, {self.num_nodes}).")
        return tuple(int(i) for i in np.unravel_index(flat, self.shape, order="F"))

    # Vectorised helpers used by assembly.

    def node_arrays(self) -> List[np.ndarray]:
        """Per-axis integer indices of every node, in lexicographic order."""
        grids = np.indices(self.shape)
        return [grids[a].ravel(order="F") for a in range(self.dim)]

    def flat_index(self, index_arrays: Sequence[np.ndarray]) -> np.ndarray:
        """Lexicographic indices of multi-index arrays (no range checks)."""
        flat = np.zeros(np.shape(index_arrays[0]), dtype=np.int64)
        for arr, stride in zip(index_arrays, self.strides):
            flat += np.asarray(arr, dtype=np.int64) * stride
        return flat

    def coordinates(self, index_arrays: Sequence[np.ndarray] = None) -> List[np.ndarray]:
        if index_arrays is None:
            index_arrays = self.node_arrays()
        return [a + np.asarray(i) * self.h for a, i in zip(self.lo, index_arrays)]

    def boundary_count(self) -> np.ndarray:
        """Number of axes on which each node sits at an endpoint."""
        count = np.zeros(self.num_nodes, dtype=np.int64)
        for arr, m in zip(self.node_arrays(), self.n):
            count += (arr == 0) | (arr == m)
        return count

    def side_mask(self, side: str) -> np.ndarray:
        """Nodes on a side, including its edges and corners."""
        axis, upper = parse_side(side, self.dim)
        arr = self.node_arrays()[axis]
        return arr == (self.n[axis] if upper else 0)

    def class_masks(self) -> Dict[str, np.ndarray]:
        count = self.boundary_count()
        masks = {"interior": count == 0, "face": count == 1, "corner": count == self.dim}
        if self.dim == 3:
            masks["edge"] = count == 2
        return masks

    def as_array(self, flat_values: np.ndarray) -> np.ndarray:
        """Reshape a lexicographic nodal vector to an ij-indexed array."""
        return np.asarray(flat_values).reshape(self.shape, order="F")


def classify(grid: UniformGrid, idx: Sequence[int]) -> NodeClass:
    """Classifies a node as interior, face, edge or corner."""
    return grid.classify(idx)


def node_coords(grid: UniformGrid, idx: Sequence[int]) -> Tuple[float, ...]:
    """Coordinates lo[a] + idx[a] * h of a node."""
    return grid.node_coords(idx)


def lex_index(grid: UniformGrid, idx: Sequence[int]) -> int:
    """Row-major (x fastest) flat index of a node."""
    return grid.lex_index(idx)
