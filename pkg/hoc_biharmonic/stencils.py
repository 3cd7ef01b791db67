"""
Catalog of the compact stencils used by the scheme.

A stencil anchored at node p encodes the discrete equation

    Σ u_part[o] U(p+o) / h² + Σ v_part[o] V(p+o)
        = Σ f_part[o] f(p+o) h^f_power + Σ g_part[o] g(p+o) / h

and its residual is the left side minus the right side. Interior stencils
discretise Δu = v (and, with (V, f) in place of (U, v), Δv = f). Boundary
stencils are stored for the lower x side ("x-", inward direction +x) where g is
the outward normal derivative g_N = -u_x; rotate_to_side moves them to any
other side. Coefficients are exact fractions and only become floats in
``Stencil.weights``.
"""

import itertools
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grid import UniformGrid, canonical_side, parse_side
from .utils import validate_dim

Offset = Tuple[int, ...]
Part = Dict[Offset, Fraction]
FieldLike = Union[Callable[..., np.ndarray], np.ndarray, None]

INTERIOR_ANCHOR = "interior"
CANONICAL_SIDE = "x-"

# Power of h multiplying each part in the discrete equation.
H_POWERS = {"u": -2, "v": 0, "g": -1}
PART_NAMES = ("u", "v", "f", "g")


def _part(entries: Dict[Offset, object], scale=1) -> Part:
    scale = Fraction(scale)
    return {tuple(o): Fraction(c) * scale for o, c in entries.items() if Fraction(c) != 0}


def _by_neighbour_kind(dim: int, weights: Dict[int, object], scale=1) -> Part:
    """Symmetric part keyed by how many offset components are non-zero."""
    entries = {}
    for offset in itertools.product((-1, 0, 1), repeat=dim):
        kind = sum(1 for c in offset if c != 0)
        if kind in weights:
            entries[offset] = weights[kind]
    return _part(entries, scale)


@dataclass(frozen=True)
class Stencil:
    """
    Exact-rational compact stencil.

    Parameters:
        name (str): Catalog name.
        dim (int): Spatial dimension.
        anchor (str): "interior" or the side id the stencil applies on.
        u_part, v_part, f_part, g_part (Dict[Offset, Fraction]): Coefficients by offset.
        f_power (int): Power of h multiplying the f part (0 or 2).
    """

    name: str
    dim: int
    anchor: str
    u_part: Part
    v_part: Part = field(default_factory=dict)
    f_part: Part = field(default_factory=dict)
    g_part: Part = field(default_factory=dict)
    f_power: int = 0

    def __post_init__(self):
        validate_dim(self.dim)
        if self.anchor != INTERIOR_ANCHOR:
            object.__setattr__(self, "anchor", canonical_side(self.anchor, self.dim))
        for label, part in self.parts().items():
            for offset in part:
                if len(offset) != self.dim or any(c not in (-1, 0, 1) for c in offset):
                    raise ValueError(f"{self.name}: {label}-offset {offset} is not compact.")
        if self.g_part:
            if not self.is_boundary:
                raise ValueError(f"{self.name}: an interior stencil cannot carry a g part.")
            axis = self.normal_axis
            if any(offset[axis] != 0 for offset in self.g_part):
                raise ValueError(f"{self.name}: g offsets must be tangential to the side.")

    @property
    def is_boundary(self) -> bool:
        return self.anchor != INTERIOR_ANCHOR

    @property
    def normal_axis(self) -> int:
        if not self.is_boundary:
            raise ValueError(f"{self.name} is an interior stencil.")
        return parse_side(self.anchor, self.dim)[0]

    def parts(self) -> Dict[str, Part]:
        return {"u": self.u_part, "v": self.v_part, "f": self.f_part, "g": self.g_part}

    def h_power(self, label: str) -> int:
        return self.f_power if label == "f" else H_POWERS[label]

    def u_sum(self) -> Fraction:
        return sum(self.u_part.values(), Fraction(0))

    def is_consistent(self) -> bool:
        """True when the u part annihilates constants."""
        return self.u_sum() == 0

    def weights(self, label: str) -> Tuple[np.ndarray, np.ndarray]:
        """
        Offsets and float coefficients of one part, in sorted offset order.

        Returns:
            Tuple[np.ndarray, np.ndarray]: (offsets with shape (k, dim), weights with shape (k,)).
        """
        part = self.parts()[label]
        keys = sorted(part)
        offsets = np.array(keys, dtype=np.int64).reshape(len(keys), self.dim)
        return offsets, np.array([float(part[k]) for k in keys])

    def to_dict(self) -> Dict[str, object]:
        parts = {}
        for label, part in self.parts().items():
            parts[label] = [
                {
                    "offset": list(offset),
                    "num": part[offset].numerator,
                    "den": part[offset].denominator,
                    "h_power": self.h_power(label),
                }
                for offset in sorted(part)
            ]
        return {"name": self.name, "dim": self.dim, "anchor": self.anchor, "parts": parts}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "Stencil":
        parts = {}
        f_power = 0
        for label in PART_NAMES:
            entries = data["parts"].get(label, [])
            parts[label] = {
                tuple(e["offset"]): Fraction(e["num"], e["den"]) for e in entries
            }
            if label == "f" and entries:
                f_power = int(entries[0]["h_power"])
        return cls(
            name=data["name"],
            dim=int(data["dim"]),
            anchor=data["anchor"],
            u_part=parts["u"],
            v_part=parts["v"],
            f_part=parts["f"],
            g_part=parts["g"],
            f_power=f_power,
        )


HOC9_2D = Stencil(
    name="HOC9_2D",
    dim=2,
    anchor=INTERIOR_ANCHOR,
    u_part=_by_neighbour_kind(2, {0: -20, 1: 4, 2: 1}, Fraction(1, 6)),
    v_part=_by_neighbour_kind(2, {0: 8, 1: 1}, Fraction(-1, 12)),
)

HOC19_3D = Stencil(
    name="HOC19_3D",
    dim=3,
    anchor=INTERIOR_ANCHOR,
    u_part=_by_neighbour_kind(3, {0: -24, 1: 2, 2: 1}, Fraction(1, 6)),
    v_part=_by_neighbour_kind(3, {0: 6, 1: 1}, Fraction(-1, 12)),
)

_BOUNDARY_U_2D = _part(
    {(0, -1): 4, (1, -1): 2, (0, 0): -20, (1, 0): 8, (0, 1): 4, (1, 1): 2},
    Fraction(1, 6),
)

# Boundary closure of Δu = v with a Neumann condition. The source term is V
# and references the ghost node (-1, 0).
NEUMANN_HOC_2D = Stencil(
    name="NEUMANN_HOC_2D",
    dim=2,
    anchor=CANONICAL_SIDE,
    u_part=_BOUNDARY_U_2D,
    v_part=_part({(0, -1): 1, (-1, 0): -1, (0, 0): 8, (1, 0): 3, (0, 1): 1}, Fraction(-1, 12)),
    g_part=_part({(0, 0): -2}),
)

COUPLED_BOUNDARY_2D = Stencil(
    name="COUPLED_BOUNDARY_2D",
    dim=2,
    anchor=CANONICAL_SIDE,
    u_part=_BOUNDARY_U_2D,
    v_part=_part({(0, -1): 2, (0, 0): 4, (1, 0): 4, (0, 1): 2}, Fraction(-1, 12)),
    f_part=_part({(0, 0): Fraction(-1, 12)}),
    g_part=_part({(0, 0): -2}),
    f_power=2,
)

# Same closure with +2/h g_N on the right side; fails the truncation check.
PRINTED_BOUNDARY_2D_SIGN = replace(
    COUPLED_BOUNDARY_2D, name="PRINTED_BOUNDARY_2D_SIGN", g_part=_part({(0, 0): 2})
)

# The 3D closure as originally printed, coefficient for coefficient. Its u part sums to
# -1/2, so it does not annihilate constants.
PRINTED_BOUNDARY_3D = Stencil(
    name="PRINTED_BOUNDARY_3D",
    dim=3,
    anchor=CANONICAL_SIDE,
    u_part=_part(
        {
            (0, -1, -1): 1, (0, 0, -1): 2, (0, 1, -1): 1,
            (0, -1, 0): 2, (0, 0, 0): -24, (0, 1, 0): 2,
            (0, -1, 1): 1, (0, 0, 1): 2, (0, 1, 1): 1,
            (1, -1, 0): 2, (1, 0, -1): 1, (1, 0, 0): 4, (1, 1, 0): 1, (1, 0, 1): 1,
        },
        Fraction(1, 6),
    ),
    v_part=_part(
        {
            (0, -1, 0): 1, (0, 0, -1): 1, (0, 0, 0): 4, (0, 1, 0): 1, (0, 0, 1): 1,
            (1, -1, 0): 1, (1, 0, -1): 1, (1, 1, 0): 1, (1, 0, 1): 1,
        },
        Fraction(-1, 12),
    ),
    f_part=_part({(0, 0, 0): Fraction(-1, 12)}),
    g_part=_part({(0, 0, 0): -2}),
    f_power=2,
)


def __getattr__(name: str):
    # COUPLED_BOUNDARY_3D is produced by the derivation engine on first access.
    if name == "COUPLED_BOUNDARY_3D":
        from .derive import coupled_boundary_3d

        return coupled_boundary_3d()
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def interior_stencil(dim: int) -> Stencil:
    return HOC9_2D if validate_dim(dim) == 2 else HOC19_3D


def boundary_stencil(dim: int) -> Stencil:
    """Certified coupled boundary closure for the canonical side."""
    if validate_dim(dim) == 2:
        return COUPLED_BOUNDARY_2D
    from .derive import coupled_boundary_3d

    return coupled_boundary_3d()


def catalog() -> Dict[str, Stencil]:
    stencils = [
        HOC9_2D,
        HOC19_3D,
        NEUMANN_HOC_2D,
        COUPLED_BOUNDARY_2D,
        boundary_stencil(3),
        PRINTED_BOUNDARY_2D_SIGN,
        PRINTED_BOUNDARY_3D,
    ]
    return {st.name: st for st in stencils}


def _side_map(source: str, target: str, dim: int) -> Callable[[Offset], Offset]:
    src_axis, src_upper = parse_side(source, dim)
    dst_axis, dst_upper = parse_side(target, dim)

    def move(offset: Offset) -> Offset:
        o = list(offset)
        # back to the canonical side
        if src_upper:
            o[src_axis] = -o[src_axis]
        o[0], o[src_axis] = o[src_axis], o[0]
        # then out to the target side
        o[0], o[dst_axis] = o[dst_axis], o[0]
        if dst_upper:
            o[dst_axis] = -o[dst_axis]
        return tuple(o)

    return move


def rotate_to_side(st: Stencil, side: str) -> Stencil:
    """
    Moves a boundary stencil to another side of the box.

    Offsets are permuted by the signed axis permutation taking the stencil's
    side to the target side (swap the normal axis into place, then reflect for
    an upper side). Coefficient values are unchanged.

    Parameters:
        st (Stencil): A boundary stencil.
        side (str): Target side id.

    Returns:
        Stencil: The stencil anchored on the target side.

    Raises:
        ValueError: If st is an interior stencil or the side is unknown.
    """
    if not st.is_boundary:
        raise ValueError(f"{st.name} is an interior stencil and has no side to rotate.")
    target = canonical_side(side, st.dim)
    move = _side_map(st.anchor, target, st.dim)

    def moved(part: Part) -> Part:
        return {move(o): c for o, c in part.items()}

    return replace(
        st,
        anchor=target,
        u_part=moved(st.u_part),
        v_part=moved(st.v_part),
        f_part=moved(st.f_part),
        g_part=moved(st.g_part),
    )


def _sample(values: FieldLike, label: str, grid: UniformGrid, idx: Offset) -> float:
    if values is None:
        raise ValueError(f"The stencil needs a {label} field.")
    if callable(values):
        coords = [a + i * grid.h for a, i in zip(grid.lo, idx)]
        return float(np.asarray(values(*coords)))
    arr = np.asarray(values)
    if arr.shape != grid.shape:
        raise ValueError(f"{label} field has shape {arr.shape}, expected {grid.shape}.")
    if any(not 0 <= i <= m for i, m in zip(idx, grid.n)):
        raise ValueError(f"{label} is not defined at node {idx}, outside the grid.")
    return float(arr[idx])


def apply(
    st: Stencil,
    u_field: FieldLike,
    v_field: FieldLike,
    f_field: FieldLike,
    g_field: FieldLike,
    node: Sequence[int],
    grid: UniformGrid,
) -> float:
    """
    Residual of a stencil at one node.

    Fields are either callables of the coordinates or nodal arrays of shape
    grid.shape. A field only needs to be given when its part is non-empty.

    Returns:
        float: Σ u_part·U/h² + Σ v_part·V - Σ f_part·f·h^p - Σ g_part·g/h.

    Raises:
        ValueError: If an array field is not defined at a referenced offset.
    """
    if st.dim != grid.dim:
        raise ValueError(f"{st.name} is {st.dim}D but the grid is {grid.dim}D.")
    node = tuple(int(i) for i in node)
    fields = {"u": u_field, "v": v_field, "f": f_field, "g": g_field}
    signs = {"u": 1.0, "v": 1.0, "f": -1.0, "g": -1.0}
    residual = 0.0
    for label, part in st.parts().items():
        if not part:
            continue
        scale = signs[label] * grid.h ** st.h_power(label)
        for offset, coefficient in part.items():
            idx = tuple(i + o for i, o in zip(node, offset))
            residual += scale * float(coefficient) * _sample(fields[label], label, grid, idx)
    return residual


def stencils_to_json(stencils: Optional[Iterable[Stencil]] = None) -> str:
    """JSON document of stencils (the whole catalog by default)."""
    if stencils is None:
        stencils = catalog().values()
    payload: List[Dict[str, object]] = [st.to_dict() for st in stencils]
    return json.dumps(payload, indent=2)
