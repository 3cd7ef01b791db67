"""
Linear systems for the biharmonic problem on a uniform grid.

The coupled system couples U (interior nodes) and V = ΔU (interior nodes and
face nodes of first-kind sides) in one block matrix

    [ A_h  B  ] [U]   [F_1]
    [ C   D_h ] [V] = [F_2]

with all U unknowns first, then all V unknowns, each in lexicographic node
order. Rows are built one stencil offset at a time over all anchor nodes.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.io
import scipy.sparse as sp

from .boundary import ProblemSpec, dirichlet_v
from .grid import UniformGrid, parse_side
from .stencils import Stencil, boundary_stencil, interior_stencil, rotate_to_side
from .utils import ConfigurationError

logger = logging.getLogger(__name__)

M_MATRIX_MAX_N = 16


def evaluate(func: Callable[..., np.ndarray], coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluates a field on coordinate arrays, broadcasting scalar results."""
    values = np.asarray(func(*coords), dtype=float)
    return np.broadcast_to(values, np.shape(coords[0])).astype(float)


def boundary_u_values(grid: UniformGrid, problem: ProblemSpec) -> np.ndarray:
    """g_D on every boundary node, NaN inside."""
    values = np.full(grid.num_nodes, np.nan)
    coords = grid.coordinates()
    # earlier sides win on shared edges and corners
    for side in reversed(grid.sides):
        g_D = problem.boundary.sides[side].g_D
        if g_D is None:
            raise ConfigurationError(f"Side {side} has no g_D.")
        mask = grid.side_mask(side)
        values[mask] = evaluate(g_D, [c[mask] for c in coords])
    return values


def boundary_v_values(grid: UniformGrid, problem: ProblemSpec) -> np.ndarray:
    """
    Known V: g_L on face nodes of second-kind sides and the corner/edge
    construction everywhere two or more sides meet. NaN elsewhere.
    """
    values = np.full(grid.num_nodes, np.nan)
    coords = grid.coordinates()
    count = grid.boundary_count()
    for side in problem.boundary.second_kind_sides():
        mask = grid.side_mask(side) & (count == 1)
        values[mask] = evaluate(problem.boundary.sides[side].g_L, [c[mask] for c in coords])
    for flat in np.flatnonzero(count >= 2):
        values[flat] = dirichlet_v(problem.boundary, grid, grid.unravel(flat))
    return values


class _RowBuilder:
    """Collects COO triples and the right-hand side while stencils are applied."""

    def __init__(self, grid: UniformGrid, size: int):
        self.grid = grid
        self.size = size
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []
        self.rhs = np.zeros(size)
        self.coords = grid.coordinates()

    def neighbours(self, anchors: Sequence[np.ndarray], offset: Sequence[int]) -> np.ndarray:
        return self.grid.flat_index([a + int(o) for a, o in zip(anchors, offset)])

    def couple(self, row_ids, anchors, stencil_part: Tuple[np.ndarray, np.ndarray], scale, columns, known):
        """Adds a stencil part acting on an unknown field; known values go to the right side."""
        offsets, weights = stencil_part
        for offset, weight in zip(offsets, weights):
            flat = self.neighbours(anchors, offset)
            cols = columns[flat]
            coefficient = weight * scale
            free = cols >= 0
            self.rows.append(row_ids[free])
            self.cols.append(cols[free])
            self.vals.append(np.full(int(free.sum()), coefficient))
            fixed = known[flat[~free]]
            if np.isnan(fixed).any():
                raise ValueError(f"Stencil offset {tuple(offset)} reaches a node with no value.")
            self.rhs[row_ids[~free]] -= coefficient * fixed

    def source(self, row_ids, anchors, stencil_part, scale, func):
        """Adds a stencil part acting on known data (it stays on the right side)."""
        offsets, weights = stencil_part
        for offset, weight in zip(offsets, weights):
            flat = self.neighbours(anchors, offset)
            values = evaluate(func, [c[flat] for c in self.coords])
            self.rhs[row_ids] += weight * scale * values

    def source_values(self, row_ids, anchors, stencil_part, scale, values):
        offsets, weights = stencil_part
        for offset, weight in zip(offsets, weights):
            flat = self.neighbours(anchors, offset)
            self.rhs[row_ids] += weight * scale * values[flat]

    def matrix(self) -> sp.csr_matrix:
        rows = np.concatenate(self.rows) if self.rows else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(self.cols) if self.cols else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(self.vals) if self.vals else np.zeros(0)
        matrix = sp.coo_matrix((vals, (rows, cols)), shape=(self.size, self.size)).tocsr()
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        matrix.sort_indices()
        return matrix


def _anchors(grid: UniformGrid, flat: np.ndarray) -> List[np.ndarray]:
    nodes = grid.node_arrays()
    return [axis[flat] for axis in nodes]


def _columns(num_nodes: int, flat: np.ndarray, start: int = 0) -> np.ndarray:
    columns = np.full(num_nodes, -1, dtype=np.int64)
    columns[flat] = start + np.arange(flat.size)
    return columns


@dataclass
class BlockSystem:
    """
    Assembled coupled system.

    u_map and v_map hold the flat node index of every U and V unknown;
    u_known and v_known hold the Dirichlet values (NaN where the node is unknown
    or carries no Dirichlet value).
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    u_map: np.ndarray
    v_map: np.ndarray
    grid: UniformGrid
    problem: ProblemSpec
    u_known: np.ndarray
    v_known: np.ndarray

    @property
    def n_u(self) -> int:
        return int(self.u_map.size)

    @property
    def n_v(self) -> int:
        return int(self.v_map.size)

    @property
    def size(self) -> int:
        return self.n_u + self.n_v

    def blocks(self) -> Dict[str, sp.csr_matrix]:
        """The four blocks A_h, B, C, D_h of the coupled matrix."""
        nu = self.n_u
        return {
            "A_h": self.matrix[:nu, :nu],
            "B": self.matrix[:nu, nu:],
            "C": self.matrix[nu:, :nu],
            "D_h": self.matrix[nu:, nu:],
        }

    def scatter(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Full nodal U and V from a solution vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"Solution has shape {x.shape}, expected ({self.size},).")
        u = self.u_known.copy()
        v = self.v_known.copy()
        u[self.u_map] = x[:self.n_u]
        v[self.v_map] = x[self.n_u:]
        return u, v


@dataclass
class ScalarSystem:
    """A single-field system: Poisson problems of the decoupled path and the 13-point baseline."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    unknown_map: np.ndarray
    grid: UniformGrid
    known: np.ndarray

    @property
    def size(self) -> int:
        return int(self.unknown_map.size)

    def scatter(self, x: np.ndarray) -> np.ndarray:
        full = self.known.copy()
        full[self.unknown_map] = np.asarray(x, dtype=float)
        return full


def _first_kind_face_nodes(grid: UniformGrid, problem: ProblemSpec) -> Dict[str, np.ndarray]:
    count = grid.boundary_count()
    return {
        side: np.flatnonzero(grid.side_mask(side) & (count == 1))
        for side in problem.boundary.first_kind_sides()
    }


def _check_problem(grid: UniformGrid, problem: ProblemSpec):
    if problem.dim != grid.dim:
        raise ConfigurationError(f"Problem is {problem.dim}D but the grid is {grid.dim}D.")


def assemble_coupled(grid: UniformGrid, problem: ProblemSpec) -> BlockSystem:
    """
    Builds the coupled block system.

    U rows apply the interior compact stencil to Δu = v; interior V rows apply
    it to Δv = f; V rows on first-kind faces apply the coupled closure rotated
    to their side. Known U and V values are folded into the right side. Rows
    are scaled as the stencils are written: u-part O(h^-2), v-part O(1).

    Parameters:
        grid (UniformGrid): The grid.
        problem (ProblemSpec): Load and boundary data.

    Returns:
        BlockSystem: The assembled system.

    Raises:
        ConfigurationError: If no side is of the first kind, or data are missing.
    """
    _check_problem(grid, problem)
    faces = _first_kind_face_nodes(grid, problem)
    if not faces:
        raise ConfigurationError("All sides are of the second kind; use assemble_decoupled.")

    interior = np.flatnonzero(grid.boundary_count() == 0)
    v_nodes = np.sort(np.concatenate([interior] + list(faces.values())))
    n_u = interior.size
    u_col = _columns(grid.num_nodes, interior)
    v_col = _columns(grid.num_nodes, v_nodes, start=n_u)

    u_known = boundary_u_values(grid, problem)
    v_known = boundary_v_values(grid, problem)

    h = grid.h
    builder = _RowBuilder(grid, n_u + v_nodes.size)
    inner = interior_stencil(grid.dim)

    anchors = _anchors(grid, interior)
    # Δu = v
    builder.couple(u_col[interior], anchors, inner.weights("u"), h ** -2, u_col, u_known)
    builder.couple(u_col[interior], anchors, inner.weights("v"), 1.0, v_col, v_known)
    # Δv = f
    builder.couple(v_col[interior], anchors, inner.weights("u"), h ** -2, v_col, v_known)
    builder.source(v_col[interior], anchors, inner.weights("v"), -1.0, problem.f)

    closure = boundary_stencil(grid.dim)
    for side, nodes in faces.items():
        st = rotate_to_side(closure, side)
        rows = v_col[nodes]
        anchors = _anchors(grid, nodes)
        builder.couple(rows, anchors, st.weights("u"), h ** -2, u_col, u_known)
        builder.couple(rows, anchors, st.weights("v"), 1.0, v_col, v_known)
        builder.source(rows, anchors, st.weights("f"), h ** st.f_power, problem.f)
        builder.source(rows, anchors, st.weights("g"), h ** -1, problem.boundary.sides[side].g_N)

    system = BlockSystem(
        matrix=builder.matrix(),
        rhs=builder.rhs,
        u_map=interior,
        v_map=v_nodes,
        grid=grid,
        problem=problem,
        u_known=u_known,
        v_known=v_known,
    )
    logger.info(
        "Assembled coupled %dD system on n=%s: %d U + %d V unknowns, %d non-zeros.",
        grid.dim, grid.n, system.n_u, system.n_v, system.matrix.nnz,
    )
    return system


def assemble_poisson(grid: UniformGrid, source: np.ndarray, boundary_values: np.ndarray,
                     stencil: Optional[Stencil] = None) -> ScalarSystem:
    """
    Compact fourth-order discretisation of Δw = s with Dirichlet data.

    Parameters:
        grid (UniformGrid): The grid.
        source (np.ndarray): Nodal values of s on every node (lexicographic).
        boundary_values (np.ndarray): Nodal values of w; only boundary entries are read.
        stencil (Stencil, optional): Interior stencil, defaults to the catalog one.

    Returns:
        ScalarSystem: System over the interior nodes.
    """
    stencil = stencil or interior_stencil(grid.dim)
    source = np.asarray(source, dtype=float)
    interior = np.flatnonzero(grid.boundary_count() == 0)
    known = np.where(grid.boundary_count() > 0, np.asarray(boundary_values, dtype=float), np.nan)
    columns = _columns(grid.num_nodes, interior)
    builder = _RowBuilder(grid, interior.size)
    anchors = _anchors(grid, interior)
    builder.couple(columns[interior], anchors, stencil.weights("u"), grid.h ** -2, columns, known)
    builder.source_values(columns[interior], anchors, stencil.weights("v"), -1.0, source)
    return ScalarSystem(builder.matrix(), builder.rhs, interior, grid, known)


def assemble_decoupled(grid: UniformGrid, problem: ProblemSpec):
    """
    Splits a problem with only second-kind sides into two Dirichlet Poisson problems.

    Returns:
        Tuple[ScalarSystem, Callable]: The system for V (source f, data g_L) and
        a builder that takes the full nodal V and returns the system for U
        (source V, data g_D).

    Raises:
        ConfigurationError: If any side is of the first kind.
    """
    _check_problem(grid, problem)
    if problem.boundary.first_kind_sides():
        raise ConfigurationError(
            f"Sides {problem.boundary.first_kind_sides()} are of the first kind; use assemble_coupled."
        )
    coords = grid.coordinates()
    f_values = evaluate(problem.f, coords)
    v_system = assemble_poisson(grid, f_values, boundary_v_values(grid, problem))
    u_boundary = boundary_u_values(grid, problem)

    def u_builder(v_full: np.ndarray) -> ScalarSystem:
        return assemble_poisson(grid, v_full, u_boundary)

    logger.info("Assembled decoupled %dD Poisson pair: %d unknowns each.", grid.dim, v_system.size)
    return v_system, u_builder


# Thirteen-point Δ² stencil times h^4, keyed by offset.
BIHARMONIC_13 = {
    (0, 0): 20.0,
    (1, 0): -8.0, (-1, 0): -8.0, (0, 1): -8.0, (0, -1): -8.0,
    (1, 1): 2.0, (1, -1): 2.0, (-1, 1): 2.0, (-1, -1): 2.0,
    (2, 0): 1.0, (-2, 0): 1.0, (0, 2): 1.0, (0, -2): 1.0,
}


def assemble_13point_2d(grid: UniformGrid, problem: ProblemSpec) -> ScalarSystem:
    """
    Second-order 13-point discretisation of Δ²u = f, the conditioning baseline.

    A ghost node q one cell outside side s is eliminated with the central
    difference of the normal derivative at the boundary node b between q and
    its mirror p: U(q) = U(p) + 2h g_N(b).

    Raises:
        ConfigurationError: If the grid is not 2D or a side is not of the first kind.
    """
    _check_problem(grid, problem)
    if grid.dim != 2:
        raise ConfigurationError("The 13-point baseline is 2D only.")
    if problem.boundary.second_kind_sides():
        raise ConfigurationError("The 13-point baseline needs first-kind data on every side.")

    h = grid.h
    interior = np.flatnonzero(grid.boundary_count() == 0)
    columns = _columns(grid.num_nodes, interior)
    known = boundary_u_values(grid, problem)
    builder = _RowBuilder(grid, interior.size)
    anchors = _anchors(grid, interior)
    rows = columns[interior]
    coords = grid.coordinates()

    for offset, weight in BIHARMONIC_13.items():
        target = [a + o for a, o in zip(anchors, offset)]
        ghost_sides = np.full(rows.size, -1)
        for side_number, side in enumerate(grid.sides):
            axis, upper = parse_side(side, 2)
            outside = target[axis] > grid.n[axis] if upper else target[axis] < 0
            ghost_sides[outside] = side_number
        direct = ghost_sides < 0
        builder.couple(
            rows[direct], [t[direct] for t in anchors],
            (np.array([offset]), np.array([weight])), h ** -4, columns, known,
        )
        for side_number, side in enumerate(grid.sides):
            hit = ghost_sides == side_number
            if not hit.any():
                continue
            axis, upper = parse_side(side, 2)
            edge = grid.n[axis] if upper else 0
            mirror = [t[hit].copy() for t in target]
            mirror[axis] = 2 * edge - mirror[axis]
            foot = [t[hit].copy() for t in target]
            foot[axis] = np.full(int(hit.sum()), edge)
            mirror_flat = grid.flat_index(mirror)
            foot_flat = grid.flat_index(foot)
            cols = columns[mirror_flat]
            coefficient = weight * h ** -4
            free = cols >= 0
            builder.rows.append(rows[hit][free])
            builder.cols.append(cols[free])
            builder.vals.append(np.full(int(free.sum()), coefficient))
            builder.rhs[rows[hit][~free]] -= coefficient * known[mirror_flat[~free]]
            g_N = evaluate(problem.boundary.sides[side].g_N, [c[foot_flat] for c in coords])
            builder.rhs[rows[hit]] -= coefficient * 2.0 * h * g_N

    builder.rhs += evaluate(problem.f, [c[interior] for c in coords])
    system = ScalarSystem(builder.matrix(), builder.rhs, interior, grid, known)
    logger.info("Assembled 13-point baseline on n=%s: %d unknowns.", grid.n, system.size)
    return system


@dataclass
class MMatrixReport:
    offdiagonal_nonpositive: bool
    diagonal_positive: bool
    inverse_nonnegative: bool
    min_inverse_entry: float

    @property
    def passed(self) -> bool:
        return self.offdiagonal_nonpositive and self.diagonal_positive and self.inverse_nonnegative


def m_matrix_check(system: BlockSystem, rtol: float = 1e-12) -> MMatrixReport:
    """
    Checks that -A_h, the U-U block of the coupled matrix, is an M-matrix.

    Raises:
        ValueError: If the grid has more than 16 cells per axis (dense inverse).
    """
    if max(system.grid.n) > M_MATRIX_MAX_N:
        raise ValueError(f"m_matrix_check needs n <= {M_MATRIX_MAX_N}, got {system.grid.n}.")
    negated = -system.blocks()["A_h"].toarray()
    diagonal = np.diag(negated)
    off = negated - np.diag(diagonal)
    inverse = np.linalg.inv(negated)
    scale = np.abs(inverse).max()
    report = MMatrixReport(
        offdiagonal_nonpositive=bool((off <= 0).all()),
        diagonal_positive=bool((diagonal > 0).all()),
        inverse_nonnegative=bool((inverse >= -rtol * scale).all()),
        min_inverse_entry=float(inverse.min()),
    )
    logger.info("M-matrix check on -A_h (%d rows): %s", negated.shape[0], "pass" if report.passed else "fail")
    return report


def export_matrix_market(matrix: sp.spmatrix, path: str, comment: str = ""):
    """Writes a matrix in Matrix Market coordinate format."""
    try:
        scipy.io.mmwrite(path, sp.coo_matrix(matrix), comment=comment)
    except OSError as exc:
        raise OSError(f"Could not write matrix to {path}: {exc}") from exc
