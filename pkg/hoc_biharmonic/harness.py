"""
Studies built on the solver: single solves, grid refinement, conditioning,
Stokes self-convergence, certification checks and report output.
"""

import copy
import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import derive
from .assembly import (
    assemble_13point_2d,
    assemble_coupled,
    assemble_decoupled,
    evaluate,
    m_matrix_check,
)
from .boundary import ProblemSpec
from .grid import UniformGrid
from .linsolve import SolveStats, estimate_cond2, solve
from .problems import (
    PROBLEMS,
    ManufacturedProblem,
    Layout,
    check_load,
    example_smooth_2d,
    example_smooth_3d,
    get_problem,
    layout_name,
    stokes_cavity,
)
from .stencils import (
    COUPLED_BOUNDARY_2D,
    HOC9_2D,
    HOC19_3D,
    PRINTED_BOUNDARY_2D_SIGN,
    PRINTED_BOUNDARY_3D,
)
from .utils import (
    CertificationError,
    ConfigurationError,
    DerivationError,
    EstimationError,
    NonConvergenceError,
    observed_order,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.5e}"

DEFAULT_CONFIG: Dict[str, Any] = {
    "problem": {"name": "smooth_2d", "params": {}},
    "boundary": "first",
    "grid": {"n": [16, 32, 64], "lo": 0.0, "hi": 1.0},
    "solver": {
        "method": "auto",
        "tol": 1e-12,
        "max_iter": 1000,
        "restart": 100,
        "drop_tol": 1e-6,
        "fill_factor": 25.0,
    },
    "cond": {"scheme": "coupled", "dim": 2, "n": [8, 16, 32], "tol": 1e-3},
    "stokes": {"n": [16, 32], "n_ref": 128, "lid_speed": 1.0},
    "checks": {
        "order_min": None, "order_max": None, "v_order_min": None, "v_order_max": None,
        "rate_min": None, "rate_max": None,
    },
    "output": {"dir": "results", "prefix": "study", "formats": ["csv", "json"], "plot": False},
    "max_workers": None,
}


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config: Union[Dict[str, Any], str, None] = None) -> Dict[str, Any]:
    """Load a study configuration from a dictionary or a JSON file, over the defaults."""
    if config is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    if isinstance(config, str):
        try:
            with open(config, "r") as file:
                config = json.load(file)
        except FileNotFoundError:
            raise FileNotFoundError(f"The configuration file {config} was not found.")
        except json.JSONDecodeError:
            raise ValueError("Invalid JSON format in the configuration file.")

    if not isinstance(config, dict):
        raise ValueError("Configuration must be a dictionary or a path to a JSON file.")
    unknown = set(config) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {sorted(unknown)}.")
    return _deep_merge(DEFAULT_CONFIG, config)


def solver_options(config: Mapping[str, Any]) -> Dict[str, Any]:
    return dict(config.get("solver", DEFAULT_CONFIG["solver"]))


@dataclass
class Solution:
    grid: UniformGrid
    problem: ProblemSpec
    u: np.ndarray
    v: np.ndarray
    stats: SolveStats
    unknowns: int


def _merge_stats(first: SolveStats, second: SolveStats) -> SolveStats:
    return SolveStats(
        iterations=first.iterations + second.iterations,
        residual=max(first.residual, second.residual),
        wall_time=first.wall_time + second.wall_time,
        method=first.method if first.method == second.method else f"{first.method}/{second.method}",
    )


def solve_problem(problem: ProblemSpec, grid: UniformGrid, options: Optional[Mapping[str, Any]] = None) -> Solution:
    """
    Solves a biharmonic problem on a grid.

    The coupled system is used when any side is of the first kind; otherwise
    the two Dirichlet Poisson problems are solved in turn.

    Returns:
        Solution: Full nodal U and V with solver statistics.
    """
    options = dict(options or {})
    if problem.boundary.first_kind_sides():
        system = assemble_coupled(grid, problem)
        x, stats = solve(system.matrix, system.rhs, **options)
        u, v = system.scatter(x)
        return Solution(grid, problem, u, v, stats, system.size)

    v_system, u_builder = assemble_decoupled(grid, problem)
    x_v, stats_v = solve(v_system.matrix, v_system.rhs, **options)
    v = v_system.scatter(x_v)
    u_system = u_builder(v)
    x_u, stats_u = solve(u_system.matrix, u_system.rhs, **options)
    u = u_system.scatter(x_u)
    return Solution(grid, problem, u, v, _merge_stats(stats_v, stats_u), v_system.size + u_system.size)


def error_norms(numeric: np.ndarray, exact: np.ndarray, h: float, dim: int) -> Tuple[float, float]:
    """
    Maximum and discrete L2 norms of numeric - exact.

    The L2 norm is sqrt(h^dim Σ e²); nodes where either field is undefined (NaN) are skipped.
    """
    error = np.asarray(numeric, dtype=float) - np.asarray(exact, dtype=float)
    error = error[np.isfinite(error)]
    if error.size == 0:
        return 0.0, 0.0
    return float(np.abs(error).max()), float(np.sqrt(h ** dim * np.sum(error ** 2)))


def _fmt(value: Optional[float]) -> str:
    return "--" if value is None else FLOAT_FORMAT.format(value)


@dataclass
class RefinementRow:
    n: int
    h: float
    unknowns: int
    error_u_inf: float
    order_u: Optional[float]
    error_v_l2: float
    order_v: Optional[float]
    iterations: int
    residual: float
    method: str


@dataclass
class RefinementReport:
    """Rows ordered by N; orders compare each row with the previous one."""

    rows: List[RefinementRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    complete: bool = True
    message: str = ""

    COLUMNS = ("n", "h", "unknowns", "error_u_inf", "order_u", "error_v_l2", "order_v", "iterations", "residual", "method")

    def orders(self, which: str = "u") -> List[float]:
        key = "order_u" if which == "u" else "order_v"
        return [getattr(r, key) for r in self.rows if getattr(r, key) is not None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "refinement",
            "metadata": self.metadata,
            "complete": self.complete,
            "message": self.message,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RefinementReport":
        return cls(
            rows=[RefinementRow(**r) for r in data["rows"]],
            metadata=dict(data.get("metadata", {})),
            complete=bool(data.get("complete", True)),
            message=data.get("message", ""),
        )

    def table_rows(self) -> List[List[str]]:
        out = []
        for r in self.rows:
            out.append([
                str(r.n), _fmt(r.h), str(r.unknowns), _fmt(r.error_u_inf), _fmt(r.order_u),
                _fmt(r.error_v_l2), _fmt(r.order_v), str(r.iterations), _fmt(r.residual), r.method,
            ])
        return out


@dataclass
class CondRow:
    n: int
    unknowns: Optional[int]
    estimate: Optional[float]
    rate: Optional[float]
    error: str = ""


@dataclass
class CondReport:
    rows: List[CondRow] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    complete: bool = True
    message: str = ""

    COLUMNS = ("n", "unknowns", "estimate", "rate", "error")

    def rates(self) -> List[float]:
        return [r.rate for r in self.rows if r.rate is not None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "cond",
            "metadata": self.metadata,
            "complete": self.complete,
            "message": self.message,
            "rows": [asdict(r) for r in self.rows],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CondReport":
        return cls(
            rows=[CondRow(**r) for r in data["rows"]],
            metadata=dict(data.get("metadata", {})),
            complete=bool(data.get("complete", True)),
            message=data.get("message", ""),
        )

    def table_rows(self) -> List[List[str]]:
        return [
            [str(r.n), "" if r.unknowns is None else str(r.unknowns), _fmt(r.estimate), _fmt(r.rate), r.error]
            for r in self.rows
        ]


Report = Union[RefinementReport, CondReport]


def _check_doublings(n_list: Sequence[int]):
    if not n_list:
        raise ValueError("The N list is empty.")
    for coarse, fine in zip(n_list, n_list[1:]):
        if fine != 2 * coarse:
            raise ValueError(f"N list must double at every level, got {list(n_list)}.")


def _run_levels(task: Callable[[int], Any], n_list: Sequence[int], max_workers: Optional[int]):
    """Runs task(n) for every level, yielding (n, result, exception) in N order."""
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [(n, pool.submit(task, n)) for n in n_list]
            for n, future in futures:
                try:
                    yield n, future.result(), None
                except NonConvergenceError as exc:
                    yield n, None, exc
        return
    for n in n_list:
        try:
            yield n, task(n), None
        except NonConvergenceError as exc:
            yield n, None, exc


def _append_orders(rows: List[RefinementRow]):
    for previous, row in zip(rows, rows[1:]):
        row.order_u = observed_order(previous.error_u_inf, row.error_u_inf)
        row.order_v = observed_order(previous.error_v_l2, row.error_v_l2)


def refine_study(
    problem: ManufacturedProblem,
    layout: Layout,
    n_list: Sequence[int],
    options: Optional[Mapping[str, Any]] = None,
    max_workers: Optional[int] = None,
) -> RefinementReport:
    """
    Grid refinement study of a manufactured problem.

    U errors are measured in the maximum norm, V errors in the discrete L2
    norm, both over all nodes. A solver failure stops the study and returns
    the levels finished so far with complete = False.

    Raises:
        ValueError: If the N list is not a sequence of doublings.
    """
    _check_doublings(n_list)
    options = dict(options or {})
    spec = problem.to_problem(layout)
    report = RefinementReport(metadata={
        "study": "refine",
        "problem": problem.name,
        "params": dict(problem.params),
        "dim": problem.dim,
        "layout": layout_name(layout),
        "tol": options.get("tol", 1e-12),
    })

    def level(n: int) -> RefinementRow:
        grid = UniformGrid.cube(problem.dim, n, problem.lo, problem.hi)
        solution = solve_problem(spec, grid, options)
        coords = grid.coordinates()
        e_u, _ = error_norms(solution.u, evaluate(problem.u, coords), grid.h, grid.dim)
        _, e_v = error_norms(solution.v, evaluate(problem.laplacian, coords), grid.h, grid.dim)
        logger.info("N=%d: |E_U|_inf=%.3e, |E_V|_L2=%.3e", n, e_u, e_v)
        return RefinementRow(
            n=n, h=grid.h, unknowns=solution.unknowns, error_u_inf=e_u, order_u=None,
            error_v_l2=e_v, order_v=None, iterations=solution.stats.iterations,
            residual=solution.stats.residual, method=solution.stats.method,
        )

    for n, row, exc in _run_levels(level, n_list, max_workers):
        if exc is not None:
            report.complete = False
            report.message = f"N={n}: {exc}"
            logger.error("Refinement study aborted at N=%d: %s", n, exc)
            break
        report.rows.append(row)
    _append_orders(report.rows)
    return report


def _cond_matrix(scheme: str, dim: int, n: int):
    grid = UniformGrid.cube(dim, n)
    if scheme == "coupled":
        problem = (example_smooth_2d() if dim == 2 else example_smooth_3d()).to_problem("first")
        return assemble_coupled(grid, problem).matrix
    if scheme == "13-point":
        if dim != 2:
            raise ConfigurationError("The 13-point baseline is 2D only.")
        return assemble_13point_2d(grid, example_smooth_2d().to_problem("first")).matrix
    raise ConfigurationError(f"Unknown scheme '{scheme}'; use 'coupled' or '13-point'.")


def cond_study(scheme: str, n_list: Sequence[int], dim: int = 2, tol: float = 1e-3) -> CondReport:
    """
    Condition-number growth of the coupled system or the 13-point baseline.

    rate = estimate(2N) / estimate(N). A failing estimate is recorded on its row.
    """
    _check_doublings(n_list)
    report = CondReport(metadata={"study": "cond", "scheme": scheme, "dim": dim, "tol": tol})
    for n in n_list:
        matrix = _cond_matrix(scheme, dim, n)
        try:
            estimate = estimate_cond2(matrix, tol=tol)
            row = CondRow(n, matrix.shape[0], estimate, None)
        except EstimationError as exc:
            logger.error("Condition estimate failed at N=%d: %s", n, exc)
            row = CondRow(n, matrix.shape[0], None, None, str(exc))
            report.complete = False
        if report.rows and report.rows[-1].estimate and row.estimate:
            row.rate = row.estimate / report.rows[-1].estimate
        logger.info("%s N=%d: cond2 ~ %s", scheme, n, _fmt(row.estimate))
        report.rows.append(row)
    return report


def _centre_velocity(u: np.ndarray, h: float) -> Tuple[float, float]:
    """(-u_y, u_x) at the middle node by fourth-order central differences."""
    i, j = (s // 2 for s in u.shape)
    w = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    u_x = float(w @ u[i - 2:i + 3, j])
    u_y = float(w @ u[i, j - 2:j + 3])
    return -u_y, u_x


def stokes_study(
    n_list: Sequence[int],
    n_ref: int,
    lid_speed: float = 1.0,
    options: Optional[Mapping[str, Any]] = None,
    max_workers: Optional[int] = None,
) -> RefinementReport:
    """
    Self-convergence of the Stokes cavity against a fine reference solution.

    Errors of U (maximum norm) and V (discrete L2 norm) are taken at nodes
    shared with the reference grid.

    Raises:
        ValueError: If n_ref is not a multiple of every N or is below 4·max(N).
    """
    _check_doublings(n_list)
    if any(n_ref % n for n in n_list) or n_ref < 4 * max(n_list):
        raise ValueError(f"n_ref={n_ref} must be a multiple of every N and at least 4*max(N).")
    options = dict(options or {})
    problem = stokes_cavity(lid_speed)

    reference = solve_problem(problem, UniformGrid.cube(2, n_ref), options)
    u_ref = reference.grid.as_array(reference.u)
    v_ref = reference.grid.as_array(reference.v)
    velocity = _centre_velocity(u_ref, reference.grid.h)
    report = RefinementReport(metadata={
        "study": "stokes",
        "problem": problem.name,
        "lid_speed": lid_speed,
        "n_ref": n_ref,
        "tol": options.get("tol", 1e-12),
        "symmetry_defect": float(np.abs(u_ref - u_ref[::-1, :]).max()),
        "centre_velocity": list(velocity),
        "below_lid_centre": float(u_ref[n_ref // 2, n_ref - 1]),
    })

    def level(n: int) -> RefinementRow:
        grid = UniformGrid.cube(2, n)
        solution = solve_problem(problem, grid, options)
        stride = n_ref // n
        e_u, _ = error_norms(grid.as_array(solution.u), u_ref[::stride, ::stride], grid.h, 2)
        _, e_v = error_norms(grid.as_array(solution.v), v_ref[::stride, ::stride], grid.h, 2)
        logger.info("Stokes N=%d: |E_U|_inf=%.3e against N_ref=%d", n, e_u, n_ref)
        return RefinementRow(
            n=n, h=grid.h, unknowns=solution.unknowns, error_u_inf=e_u, order_u=None,
            error_v_l2=e_v, order_v=None, iterations=solution.stats.iterations,
            residual=solution.stats.residual, method=solution.stats.method,
        )

    for n, row, exc in _run_levels(level, n_list, max_workers):
        if exc is not None:
            report.complete = False
            report.message = f"N={n}: {exc}"
            logger.error("Stokes study aborted at N=%d: %s", n, exc)
            break
        report.rows.append(row)
    _append_orders(report.rows)
    return report


def report_csv(report: Report) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(report.COLUMNS)
    writer.writerows(report.table_rows())
    return buffer.getvalue()


def report_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> Report:
    data = json.loads(text)
    if data.get("kind") == "cond":
        return CondReport.from_dict(data)
    return RefinementReport.from_dict(data)


def grid_dump(solution: Solution) -> str:
    """One line "x y [z] u v" per node, in lexicographic order."""
    coords = solution.grid.coordinates()
    columns = np.column_stack(coords + [solution.u, solution.v])
    return "".join(" ".join(FLOAT_FORMAT.format(v) for v in line) + "\n" for line in columns)


def _write(path: str, text: str) -> str:
    try:
        with open(path, "w") as file:
            file.write(text)
    except OSError as exc:
        raise OSError(f"Could not write {path}: {exc}") from exc
    return path


def emit_report(
    report: Optional[Report],
    out_dir: str,
    prefix: str = "study",
    formats: Sequence[str] = ("csv", "json"),
    solution: Optional[Solution] = None,
) -> List[str]:
    """
    Writes a report as CSV and/or JSON and, with "grid", a nodal dump of a solution.

    Returns:
        List[str]: Paths written.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"Could not create output directory {out_dir}: {exc}") from exc
    written = []
    for fmt in formats:
        extension = "dat" if fmt == "grid" else fmt
        path = os.path.join(out_dir, f"{prefix}.{extension}")
        if fmt == "csv" and report is not None:
            written.append(_write(path, report_csv(report)))
        elif fmt == "json" and report is not None:
            written.append(_write(path, report_json(report)))
        elif fmt == "grid":
            if solution is None:
                raise ValueError("A grid dump needs a solution.")
            written.append(_write(path, grid_dump(solution)))
        elif fmt not in ("csv", "json", "grid"):
            raise ValueError(f"Unknown report format '{fmt}'.")
    return written


def within(values: Sequence[float], low: Optional[float], high: Optional[float]) -> bool:
    """True when every value lies in [low, high]; unset bounds are not checked."""
    return all((low is None or v >= low) and (high is None or v <= high) for v in values)


def checks_pass(report: Report, checks: Mapping[str, Optional[float]]) -> bool:
    """U orders against order_min/max, V orders against v_order_min/max, rates against rate_min/max."""
    if not report.complete:
        return False
    if isinstance(report, CondReport):
        return within(report.rates(), checks.get("rate_min"), checks.get("rate_max"))
    return within(report.orders("u"), checks.get("order_min"), checks.get("order_max")) and within(
        report.orders("v"), checks.get("v_order_min"), checks.get("v_order_max")
    )


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, func: Callable[[], Tuple[bool, str]]):
        try:
            passed, detail = func()
        except (CertificationError, DerivationError, ValueError) as exc:
            passed, detail = False, str(exc)
        self.checks.append(Check(name, bool(passed), detail))

    def to_text(self) -> str:
        return "\n".join(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks)


def verify_all(m_matrix_sizes: Sequence[int] = (4, 8)) -> VerificationReport:
    """Every exact certification, the load oracles and the M-matrix property."""
    report = VerificationReport()

    def exact(st, degree):
        def run():
            table = derive.certify(st, degree)
            return True, f"exact through degree {table.exact_through()}"
        return run

    report.add("HOC9_2D truncation", exact(HOC9_2D, 5))
    report.add("HOC19_3D truncation", exact(HOC19_3D, 5))
    report.add("COUPLED_BOUNDARY_2D truncation", exact(COUPLED_BOUNDARY_2D, 4))
    report.add("2D boundary leading term", lambda: (derive.verify_2d_boundary().passed, "degree-5 residuals match"))
    report.add("ghost elimination", lambda: (derive.ghost_identity_check().passed, "coefficients match"))

    def closure_3d():
        result = derive.solve_3d_boundary(symmetry=True)
        return True, f"rank {result.rank}, {result.free_parameters} free parameters"

    report.add("3D boundary derivation", closure_3d)
    report.add(
        "printed 3D closure rejected",
        lambda: (not PRINTED_BOUNDARY_3D.is_consistent(), f"u coefficients sum to {PRINTED_BOUNDARY_3D.u_sum()}"),
    )
    report.add(
        "printed 2D g_N sign rejected",
        lambda: (derive.truncation_table(PRINTED_BOUNDARY_2D_SIGN, 1).exact_through() < 1, "fails on linear data"),
    )
    for name, factory in PROBLEMS.items():
        def load(factory=factory):
            check = check_load(factory())
            return check.passed, f"max error {check.max_error:.2e} (tol {check.atol:.2e})"
        report.add(f"load oracle {name}", load)
    for n in m_matrix_sizes:
        def m_matrix(n=n):
            system = assemble_coupled(UniformGrid.cube(2, n), example_smooth_2d().to_problem("first"))
            result = m_matrix_check(system)
            return result.passed, f"min inverse entry {result.min_inverse_entry:.3e}"
        report.add(f"M-matrix -A_h N={n}", m_matrix)
    return report


def plot_solution(solution: Solution, path: Optional[str] = None):
    """
    Plot U and V. 3D solutions are shown on the middle z plane.
    """
    import matplotlib.pyplot as plt

    grid = solution.grid
    u = grid.as_array(solution.u)
    v = grid.as_array(solution.v)
    x, y = np.meshgrid(*(grid.lo[a] + grid.h * np.arange(grid.shape[a]) for a in range(2)), indexing="ij")
    if grid.dim == 3:
        mid = grid.shape[2] // 2
        u, v = u[:, :, mid], v[:, :, mid]

    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5))
    for ax, values, title in zip(axes, (u, v), ("U", "V = ΔU")):
        image = ax.contourf(x, y, values, levels=30, cmap="viridis")
        fig.colorbar(image, ax=ax)
        ax.set_title(f"{title} ({solution.problem.name}, N={grid.n[0]})")
        ax.set_aspect("equal")
    if path is None:
        plt.show()
    else:
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)


def problem_from_config(config: Mapping[str, Any]) -> ManufacturedProblem:
    spec = config["problem"]
    return get_problem(spec["name"], spec.get("params", {}))
