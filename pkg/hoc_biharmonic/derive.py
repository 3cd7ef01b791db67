"""
Exact-rational Taylor matching for compact stencils.

A stencil is checked by applying it, in exact arithmetic, to monomials
x^a y^b [z^c] anchored at the origin with h = 1, using v = ΔM, f = Δ²M and the
outward normal derivative of M as g. Because every part of a catalog stencil
scales homogeneously in h, the residual on a monomial of degree d carries
h^(d-2).

The same machinery poses the undetermined-coefficient system for the 3D
boundary closure on the side x = x_lo and solves it with sympy rationals.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import sympy

from .grid import AXIS_NAMES, parse_side
from .stencils import (
    CANONICAL_SIDE,
    COUPLED_BOUNDARY_2D,
    INTERIOR_ANCHOR,
    NEUMANN_HOC_2D,
    Stencil,
)
from .utils import CertificationError, DerivationError

logger = logging.getLogger(__name__)

Exponent = Tuple[int, ...]
Unknown = Tuple[str, Tuple[int, ...]]

MAX_DEGREE = 8
# Coefficient of g_N in the boundary closure, fixed to match the 2D closure.
G_NORMALIZATION = Fraction(-2)


def monomials(dim: int, max_degree: int) -> List[Exponent]:
    """Exponent tuples of total degree <= max_degree, ordered by degree."""
    exps = [e for e in itertools.product(range(max_degree + 1), repeat=dim) if sum(e) <= max_degree]
    return sorted(exps, key=lambda e: (sum(e), tuple(-c for c in e)))


def monomial_label(exponent: Exponent) -> str:
    factors = []
    for axis, power in enumerate(exponent):
        if power == 1:
            factors.append(AXIS_NAMES[axis])
        elif power > 1:
            factors.append(f"{AXIS_NAMES[axis]}^{power}")
    return "*".join(factors) or "1"


def derivative_at(exponent: Exponent, orders: Sequence[int], point: Sequence[int]) -> Fraction:
    """Exact value of a partial derivative of x^exponent at an integer point."""
    value = Fraction(1)
    for power, k, p in zip(exponent, orders, point):
        if k > power:
            return Fraction(0)
        value *= math.perm(power, k) * Fraction(p) ** (power - k)
    return value


def _unit(dim: int, axis: int, order: int) -> Tuple[int, ...]:
    return tuple(order if a == axis else 0 for a in range(dim))


def laplacian_at(exponent: Exponent, point: Sequence[int]) -> Fraction:
    dim = len(exponent)
    return sum((derivative_at(exponent, _unit(dim, a, 2), point) for a in range(dim)), Fraction(0))


def bilaplacian_at(exponent: Exponent, point: Sequence[int]) -> Fraction:
    dim = len(exponent)
    total = Fraction(0)
    for a in range(dim):
        for b in range(dim):
            orders = [0] * dim
            orders[a] += 2
            orders[b] += 2
            total += derivative_at(exponent, orders, point)
    return total


def normal_derivative_at(exponent: Exponent, point: Sequence[int], side: str) -> Fraction:
    """Outward normal derivative of the monomial on a side."""
    dim = len(exponent)
    axis, upper = parse_side(side, dim)
    d = derivative_at(exponent, _unit(dim, axis, 1), point)
    return d if upper else -d


def monomial_residual(st: Stencil, exponent: Exponent) -> Fraction:
    """Residual of a stencil at the origin (h = 1) on one monomial."""
    residual = Fraction(0)
    for offset, c in st.u_part.items():
        residual += c * derivative_at(exponent, (0,) * st.dim, offset)
    for offset, c in st.v_part.items():
        residual += c * laplacian_at(exponent, offset)
    if st.f_part:
        for offset, c in st.f_part.items():
            residual -= c * bilaplacian_at(exponent, offset)
    for offset, c in st.g_part.items():
        residual -= c * normal_derivative_at(exponent, offset, st.anchor)
    return residual


@dataclass
class TruncationTable:
    """
    Exact residuals of a stencil on monomials.

    residuals maps an exponent tuple to the residual at h = 1; the full
    residual is residuals[e] * h**h_power(e).
    """

    stencil: str
    dim: int
    max_degree: int
    residuals: Dict[Exponent, Fraction]

    @staticmethod
    def h_power(exponent: Exponent) -> int:
        return sum(exponent) - 2

    def at_degree(self, degree: int) -> Dict[Exponent, Fraction]:
        return {e: r for e, r in self.residuals.items() if sum(e) == degree}

    def nonzero(self) -> Dict[Exponent, Fraction]:
        return {e: r for e, r in self.residuals.items() if r != 0}

    def exact_through(self) -> int:
        """Largest degree d such that every monomial of degree <= d has zero residual (-1 if none)."""
        degree = -1
        for d in range(self.max_degree + 1):
            if any(r != 0 for r in self.at_degree(d).values()):
                break
            degree = d
        return degree

    def to_dict(self) -> Dict[str, object]:
        return {
            "stencil": self.stencil,
            "dim": self.dim,
            "max_degree": self.max_degree,
            "residuals": {
                monomial_label(e): {"value": str(r), "h_power": self.h_power(e)}
                for e, r in self.residuals.items()
            },
        }


def truncation_table(st: Stencil, max_degree: int) -> TruncationTable:
    """
    Exact residual of a stencil on every monomial up to max_degree.

    Parameters:
        st (Stencil): The stencil to check.
        max_degree (int): Highest total degree, at most 8.

    Returns:
        TruncationTable: Residual per exponent tuple.

    Raises:
        ValueError: If max_degree is negative or above 8, or the stencil does
            not scale homogeneously in h.
    """
    if not 0 <= max_degree <= MAX_DEGREE:
        raise ValueError(f"max_degree must be in [0, {MAX_DEGREE}], got {max_degree}.")
    if st.f_part and st.f_power != 2:
        raise ValueError(f"{st.name}: an f part needs h^2 scaling for a homogeneous residual.")
    residuals = {e: monomial_residual(st, e) for e in monomials(st.dim, max_degree)}
    return TruncationTable(st.name, st.dim, max_degree, residuals)


def certify(st: Stencil, degree: int) -> TruncationTable:
    """
    Certifies that a stencil annihilates constants and is exact through a degree.

    Raises:
        CertificationError: With the truncation table as report on failure.
    """
    table = truncation_table(st, degree)
    if not st.is_consistent():
        raise CertificationError(
            f"{st.name}: u coefficients sum to {st.u_sum()}, not 0.", report=table
        )
    bad = table.nonzero()
    if bad:
        worst = ", ".join(f"{monomial_label(e)}: {r}" for e, r in list(bad.items())[:5])
        raise CertificationError(f"{st.name} is not exact through degree {degree} ({worst}).", report=table)
    return table


# Leading truncation term of the 2D boundary closure:
# h^3/36 u_xyyyy - 7 h^3/180 u_xxxxx.
BOUNDARY_2D_LEADING_TERM = {(1, 4): Fraction(1, 36), (5, 0): Fraction(-7, 180)}


@dataclass
class LeadingTermReport:
    residuals: Dict[Exponent, Fraction]
    expected: Dict[Exponent, Fraction]
    exact_through: int
    passed: bool

    def to_dict(self) -> Dict[str, object]:
        return {
            "exact_through": self.exact_through,
            "passed": self.passed,
            "residuals": {monomial_label(e): str(r) for e, r in self.residuals.items()},
            "expected": {monomial_label(e): str(r) for e, r in self.expected.items()},
        }


def verify_2d_boundary(st: Stencil = COUPLED_BOUNDARY_2D) -> LeadingTermReport:
    """
    Checks the degree-5 residuals of the 2D boundary closure against its
    leading truncation term, monomial by monomial.

    Raises:
        CertificationError: If the closure is not exact through degree 4 or a
            degree-5 residual differs from the leading term.
    """
    table = truncation_table(st, 5)
    residuals = table.at_degree(5)
    expected = {}
    for e in residuals:
        expected[e] = sum(
            (c * derivative_at(e, orders, (0, 0)) for orders, c in BOUNDARY_2D_LEADING_TERM.items()),
            Fraction(0),
        )
    exact = table.exact_through()
    report = LeadingTermReport(residuals, expected, exact, exact >= 4 and residuals == expected)
    if not report.passed:
        raise CertificationError(f"{st.name} does not match its leading truncation term.", report=report)
    logger.info("%s: exact through degree %d, leading term verified.", st.name, exact)
    return report


# V(-1, 0) = h² f(0, 0) - (V(0,-1) - 4 V(0,0) + V(1,0) + V(0,1))
GHOST_IDENTITY = {(0, -1): Fraction(-1), (0, 0): Fraction(4), (1, 0): Fraction(-1), (0, 1): Fraction(-1)}
GHOST_OFFSET = (-1, 0)


@dataclass
class GhostReport:
    substituted: Stencil
    mismatches: Dict[str, Tuple[str, str]]
    passed: bool


def eliminate_ghost(st: Stencil = NEUMANN_HOC_2D) -> Stencil:
    """Removes the ghost V(-1, 0) from a boundary stencil with the fourth-order ghost identity."""
    v_part = dict(st.v_part)
    c = v_part.pop(GHOST_OFFSET, Fraction(0))
    for offset, weight in GHOST_IDENTITY.items():
        v_part[offset] = v_part.get(offset, Fraction(0)) + c * weight
    v_part = {o: w for o, w in v_part.items() if w != 0}
    f_part = dict(st.f_part)
    # c·h²·f sits on the left, so it moves to the right with the opposite sign.
    f_part[(0, 0)] = f_part.get((0, 0), Fraction(0)) - c
    return Stencil(
        name=f"{st.name}_GHOST_FREE",
        dim=st.dim,
        anchor=st.anchor,
        u_part=dict(st.u_part),
        v_part=v_part,
        f_part={o: w for o, w in f_part.items() if w != 0},
        g_part=dict(st.g_part),
        f_power=2,
    )


def ghost_identity_check() -> GhostReport:
    """
    Substitutes the ghost identity into the Neumann closure and compares with
    COUPLED_BOUNDARY_2D coefficient for coefficient.

    Raises:
        CertificationError: On any coefficient mismatch.
    """
    substituted = eliminate_ghost(NEUMANN_HOC_2D)
    mismatches = {}
    for label, part in substituted.parts().items():
        target = COUPLED_BOUNDARY_2D.parts()[label]
        for offset in sorted(set(part) | set(target)):
            got, want = part.get(offset, Fraction(0)), target.get(offset, Fraction(0))
            if got != want:
                mismatches[f"{label}{offset}"] = (str(got), str(want))
    report = GhostReport(substituted, mismatches, not mismatches)
    if mismatches:
        raise CertificationError("Ghost elimination does not reproduce the coupled closure.", report=report)
    return report


def _ansatz_unknowns() -> List[Unknown]:
    unknowns: List[Unknown] = []
    volume = [(i, j, k) for i in (0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    unknowns += [("alpha", o) for o in volume]
    unknowns += [("beta", o) for o in volume]
    unknowns += [("gamma", (0, j, k)) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    unknowns.append(("phi", (0, 0, 0)))
    return unknowns


def _column(unknown: Unknown, exponent: Exponent) -> Fraction:
    kind, offset = unknown
    if kind == "alpha":
        return derivative_at(exponent, (0, 0, 0), offset)
    if kind == "beta":
        return laplacian_at(exponent, offset)
    if kind == "gamma":
        # -γ·g with g = -u_x on the side x = x_lo
        return derivative_at(exponent, (1, 0, 0), offset)
    return -bilaplacian_at(exponent, offset)


@dataclass
class CoefficientSystem:
    """Homogeneous equations (one per monomial of degree <= 4) in the ansatz unknowns."""

    unknowns: List[Unknown]
    rows: List[Exponent]
    matrix: sympy.Matrix

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def row_labels(self) -> List[str]:
        return [f"monomial {monomial_label(e)}" for e in self.rows]


def build_3d_system(degree: int = 4) -> CoefficientSystem:
    """
    Undetermined-coefficient system for the 3D boundary closure.

    Unknowns: 18 u weights on the planes i = 0, 1; 18 v weights on the same
    nodes; 9 g_N weights on the boundary plane; and the f weight. One row per
    monomial of total degree <= degree (35 rows for degree 4).
    """
    unknowns = _ansatz_unknowns()
    rows = monomials(3, degree)
    entries = [[_to_rational(_column(u, e)) for u in unknowns] for e in rows]
    return CoefficientSystem(unknowns, rows, sympy.Matrix(entries))


def _to_rational(value: Fraction) -> sympy.Rational:
    return sympy.Rational(value.numerator, value.denominator)


def _in_compact_footprint(unknown: Unknown) -> bool:
    kind, (i, j, k) = unknown
    tangential = abs(j) + abs(k)
    if kind == "alpha":
        return i == 0 or tangential <= 1
    if kind == "beta":
        return tangential <= 1 and (i == 0 or tangential == 1)
    if kind == "gamma":
        return tangential == 0
    return True


FOOTPRINTS: Dict[str, Callable[[Unknown], bool]] = {
    "compact": _in_compact_footprint,
    "full": lambda unknown: True,
}

SYMMETRIES: Dict[str, Callable[[Tuple[int, ...]], Tuple[int, ...]]] = {
    "y-reflection": lambda o: (o[0], -o[1], o[2]),
    "z-reflection": lambda o: (o[0], o[1], -o[2]),
    "y-z exchange": lambda o: (o[0], o[2], o[1]),
}


@dataclass
class DerivationReport:
    """Result of solving the 3D closure system."""

    stencil: Stencil
    symmetry: bool
    footprint: str
    equations: int
    unknowns: int
    active_unknowns: int
    rank: int
    table: TruncationTable
    row_labels: List[str] = field(default_factory=list)

    @property
    def free_parameters(self) -> int:
        return self.active_unknowns - self.rank

    def to_dict(self) -> Dict[str, object]:
        return {
            "symmetry": self.symmetry,
            "footprint": self.footprint,
            "equations": self.equations,
            "unknowns": self.unknowns,
            "active_unknowns": self.active_unknowns,
            "rank": self.rank,
            "free_parameters": self.free_parameters,
            "row_labels": self.row_labels,
            "stencil": self.stencil.to_dict(),
            "truncation": self.table.to_dict(),
        }

    def to_text(self) -> str:
        lines = [
            f"3D boundary closure on side {self.stencil.anchor}",
            f"  equations: {self.equations} (monomials of degree <= 4)",
            f"  unknowns:  {self.unknowns} ({self.active_unknowns} in the '{self.footprint}' footprint)",
            f"  symmetry constraints: {'on' if self.symmetry else 'off'}",
            f"  rank: {self.rank}, free parameters: {self.free_parameters}",
            "  coefficients:",
        ]
        for label, part in self.stencil.parts().items():
            for offset in sorted(part):
                lines.append(f"    {label}{offset}: {part[offset]}")
        lines.append(f"  exact through degree {self.table.exact_through()}")
        return "\n".join(lines)


def _symmetry_rows(active: List[Unknown]) -> List[Tuple[str, Dict[int, int]]]:
    position = {u: n for n, u in enumerate(active)}
    rows = []
    seen = set()
    for name, move in SYMMETRIES.items():
        for u in active:
            image = (u[0], move(u[1]))
            if image == u:
                continue
            key = (frozenset((u, image)), name)
            if key in seen:
                continue
            seen.add(key)
            row = {position[u]: 1}
            if image in position:
                row[position[image]] = row.get(position[image], 0) - 1
            rows.append((f"symmetry {name}: {u[0]}{u[1]}", row))
    return rows


def _violated_rows(matrix: sympy.Matrix, rhs: sympy.Matrix, labels: List[str]) -> List[str]:
    """Rows that make the system inconsistent when added in order."""
    violated = []
    kept: List[int] = []
    for r in range(matrix.rows):
        trial = kept + [r]
        a = matrix.extract(trial, list(range(matrix.cols)))
        ab = a.row_join(rhs.extract(trial, [0]))
        if a.rank() < ab.rank():
            violated.append(labels[r])
        else:
            kept.append(r)
    return violated


def _min_norm_solution(matrix: sympy.Matrix, rhs: sympy.Matrix) -> sympy.Matrix:
    """Exact minimum-Euclidean-norm solution of a consistent system."""
    _, independent = matrix.T.rref()
    independent = list(independent)
    r = matrix.extract(independent, list(range(matrix.cols)))
    b = rhs.extract(independent, [0])
    return r.T * (r * r.T).LUsolve(b)


def solve_3d_boundary(
    symmetry: bool = True,
    footprint: Union[str, Callable[[Unknown], bool]] = "compact",
    name: str = "COUPLED_BOUNDARY_3D",
) -> DerivationReport:
    """
    Solves the 3D closure system and certifies the result.

    The g_N weight sum is fixed to -2 (the 2D closure's scaling). Symmetry adds
    equalities under y and z reflections and the y-z exchange. Remaining
    freedom is resolved by taking the minimum-norm exact solution.

    Parameters:
        symmetry (bool): Add the symmetry equalities.
        footprint (str or Callable): "compact", "full" or a predicate on
            (kind, offset) selecting which unknowns may be non-zero.
        name (str): Name of the produced stencil.

    Returns:
        DerivationReport: Stencil, system sizes and the truncation table.

    Raises:
        DerivationError: If the constraints are infeasible.
        CertificationError: If the solution fails the exactness check.
    """
    if callable(footprint):
        selector, footprint_name = footprint, getattr(footprint, "__name__", "custom")
    elif footprint in FOOTPRINTS:
        selector, footprint_name = FOOTPRINTS[footprint], footprint
    else:
        raise ValueError(f"Unknown footprint '{footprint}'; use {sorted(FOOTPRINTS)} or a predicate.")

    system = build_3d_system()
    columns = [n for n, u in enumerate(system.unknowns) if selector(u)]
    active = [system.unknowns[n] for n in columns]
    base = system.matrix.extract(list(range(system.matrix.rows)), columns)

    labels = system.row_labels()
    extra_rows = []
    rhs_values = [0] * base.rows

    norm_row = [1 if u[0] == "gamma" else 0 for u in active]
    if not any(norm_row):
        raise DerivationError("The footprint has no g_N weight to normalise.", ["normalization"])
    extra_rows.append(norm_row)
    rhs_values.append(_to_rational(G_NORMALIZATION))
    labels.append("normalization: sum of g_N weights = -2")

    if symmetry:
        for label, row in _symmetry_rows(active):
            extra_rows.append([row.get(n, 0) for n in range(len(active))])
            rhs_values.append(0)
            labels.append(label)

    matrix = base.col_join(sympy.Matrix(extra_rows))
    rhs = sympy.Matrix(rhs_values)
    rank = matrix.rank()
    if rank < matrix.row_join(rhs).rank():
        violated = _violated_rows(matrix, rhs, labels)
        raise DerivationError(f"The closure constraints are infeasible ({len(violated)} violated rows).", violated)

    solution = _min_norm_solution(matrix, rhs)
    parts: Dict[str, Dict[Tuple[int, ...], Fraction]] = {"alpha": {}, "beta": {}, "gamma": {}, "phi": {}}
    for u, value in zip(active, solution):
        value = sympy.Rational(value)
        if value != 0:
            parts[u[0]][u[1]] = Fraction(int(value.p), int(value.q))
    stencil = Stencil(
        name=name,
        dim=3,
        anchor=CANONICAL_SIDE,
        u_part=parts["alpha"],
        v_part=parts["beta"],
        f_part=parts["phi"],
        g_part=parts["gamma"],
        f_power=2,
    )
    table = certify(stencil, 4)
    report = DerivationReport(
        stencil=stencil,
        symmetry=symmetry,
        footprint=footprint_name,
        equations=system.shape[0],
        unknowns=system.shape[1],
        active_unknowns=len(active),
        rank=int(rank),
        table=table,
        row_labels=labels,
    )
    logger.info(
        "3D closure: %d equations, %d active unknowns, rank %d, %d free parameters.",
        report.equations, report.active_unknowns, report.rank, report.free_parameters,
    )
    return report


@lru_cache(maxsize=None)
def coupled_boundary_3d() -> Stencil:
    """The certified 3D closure used in assembly."""
    return solve_3d_boundary(symmetry=True, footprint="compact").stencil


def restrict_to_2d(st: Stencil, name: Optional[str] = None) -> Stencil:
    """
    Collapses a 3D stencil along z, as seen by data that do not depend on z.

    Raises:
        ValueError: If the stencil is not 3D or is anchored on a z side.
    """
    if st.dim != 3:
        raise ValueError(f"{st.name} is not a 3D stencil.")
    if st.anchor != INTERIOR_ANCHOR and st.normal_axis == 2:
        raise ValueError("A stencil on a z side cannot be collapsed along z.")

    def collapse(part):
        out: Dict[Tuple[int, ...], Fraction] = {}
        for (i, j, _), c in part.items():
            out[(i, j)] = out.get((i, j), Fraction(0)) + c
        return {o: c for o, c in out.items() if c != 0}

    return Stencil(
        name=name or f"{st.name}_XY",
        dim=2,
        anchor=st.anchor,
        u_part=collapse(st.u_part),
        v_part=collapse(st.v_part),
        f_part=collapse(st.f_part),
        g_part=collapse(st.g_part),
        f_power=st.f_power,
    )
