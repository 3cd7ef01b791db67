"""
Sparse linear solves and 2-norm condition estimates.
"""

import inspect
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .utils import EstimationError, NonConvergenceError

logger = logging.getLogger(__name__)

DENSE_LIMIT = 5000
MAX_REFINEMENTS = 8
# auto: ILU fill cap (in multiples of nnz(A)) and the per-cycle residual cut a restart must reach
AUTO_ILU_FILL_LIMIT = 15.0
STALL_RATIO = 0.9
METHODS = ("auto", "dense", "direct", "gmres", "bicgstab")


@dataclass
class SolveStats:
    iterations: int
    residual: float
    wall_time: float
    method: str

    def to_dict(self, include_time: bool = False) -> Dict[str, object]:
        data = {"iterations": self.iterations, "residual": self.residual, "method": self.method}
        if include_time:
            data["wall_time"] = self.wall_time
        return data


def _tolerance_keyword(func: Callable) -> str:
    # scipy renamed tol to rtol in the Krylov solvers
    return "rtol" if "rtol" in inspect.signature(func).parameters else "tol"


def relative_residual(A, x: np.ndarray, b: np.ndarray) -> float:
    """‖b - Ax‖₂ / ‖b‖₂ (the absolute residual when b = 0)."""
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return float(r / norm_b) if norm_b > 0 else float(r)


def factorize(A) -> Callable[..., np.ndarray]:
    """
    Factorizes A once and returns ``solve(b, trans=False)``.

    Dense LU for dimension <= 5000, SuperLU otherwise.
    """
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        factors = scipy.linalg.lu_factor(dense, check_finite=True)

        def dense_solve(b, trans=False):
            return scipy.linalg.lu_solve(factors, b, trans=1 if trans else 0)

        return dense_solve

    lu = spla.splu(sp.csc_matrix(A))

    def sparse_solve(b, trans=False):
        return lu.solve(np.asarray(b, dtype=float), trans="T" if trans else "N")

    return sparse_solve


def _preconditioner(A: sp.csr_matrix, drop_tol: float, fill_factor: float) -> Tuple[spla.LinearOperator, float]:
    """ILU preconditioner and its fill relative to nnz(A); Jacobi when the ILU breaks down."""
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=drop_tol, fill_factor=fill_factor)
        return spla.LinearOperator(A.shape, ilu.solve), ilu.nnz / max(A.nnz, 1)
    except RuntimeError as exc:
        logger.warning("Incomplete LU failed (%s); using a Jacobi preconditioner.", exc)
        diagonal = A.diagonal().copy()
        diagonal[diagonal == 0] = 1.0
        return spla.LinearOperator(A.shape, lambda x: x / diagonal), 1.0


def _direct(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    return spla.splu(A.tocsc()).solve(b)


def _monitored_gmres(A, b, M, tol, max_cycles, restart) -> Tuple[np.ndarray, int, float]:
    """
    GMRES one restart cycle at a time.

    Stops as soon as a cycle fails to cut the true relative residual by STALL_RATIO
    and returns the last iterate that did.
    """
    keyword = _tolerance_keyword(spla.gmres)
    x = np.zeros_like(b)
    residual = 1.0
    iterations = 0
    for cycle in range(max_cycles):
        counter = []
        trial, info = spla.gmres(
            A, b, x0=x, restart=restart, maxiter=1, M=M,
            callback=counter.append, callback_type="pr_norm", **{keyword: tol, "atol": 0.0},
        )
        iterations += len(counter)
        trial_residual = relative_residual(A, trial, b)
        if info < 0 or not trial_residual < STALL_RATIO * residual:
            logger.debug("gmres cycle %d: residual %.3e after %.3e; stopping.", cycle, trial_residual, residual)
            break
        x, residual = trial, trial_residual
        if residual <= tol:
            break
    return x, iterations, residual


def _auto_krylov(A, b, tol, max_iter, restart, drop_tol, fill_factor) -> Tuple[np.ndarray, int, float, str]:
    M, fill = _preconditioner(A, drop_tol, min(fill_factor, AUTO_ILU_FILL_LIMIT))
    if fill >= 0.9 * AUTO_ILU_FILL_LIMIT:
        logger.info("Incomplete LU holds %.1f times nnz(A); solving directly.", fill)
        x = _direct(A, b)
        return x, 0, relative_residual(A, x, b), "direct"
    x, iterations, residual = _monitored_gmres(A, b, M, tol, max_iter or 1000, restart)
    if residual <= tol:
        return x, iterations, residual, "gmres"
    logger.warning(
        "gmres stalled at relative residual %.3e after %d iterations; falling back to a direct factorization.",
        residual, iterations,
    )
    x = _direct(A, b)
    return x, iterations, relative_residual(A, x, b), "gmres+direct"


def _krylov(A, b, method, tol, max_iter, restart, drop_tol, fill_factor) -> Tuple[np.ndarray, int, float]:
    """Preconditioned Krylov iteration wrapped in iterative refinement on the true residual."""
    M, _ = _preconditioner(A, drop_tol, fill_factor)
    solver = spla.gmres if method == "gmres" else spla.bicgstab
    keyword = _tolerance_keyword(solver)
    norm_b = np.linalg.norm(b)
    x = np.zeros_like(b)
    best, best_residual = x, np.inf
    iterations = 0
    residual = np.inf
    for _ in range(MAX_REFINEMENTS):
        r = b - A @ x
        previous, residual = residual, np.linalg.norm(r) / norm_b
        if residual < best_residual:
            best, best_residual = x, residual
        if residual <= tol or residual > 0.5 * previous:
            break
        counter = []
        inner_tol = min(0.1, max(tol * norm_b / np.linalg.norm(r), 1e-14))
        options = {keyword: inner_tol, "atol": 0.0, "maxiter": max_iter, "M": M}
        if method == "gmres":
            d, info = solver(A, r, restart=restart, callback=counter.append, callback_type="pr_norm", **options)
        else:
            d, info = solver(A, r, callback=counter.append, **options)
        iterations += len(counter)
        if info < 0:
            logger.warning("%s breakdown (info=%d).", method, info)
            break
        x = x + d
    residual = relative_residual(A, x, b)
    if residual < best_residual:
        best = x
    return best, iterations, relative_residual(A, best, b)


def solve(
    A,
    b: np.ndarray,
    tol: float = 1e-12,
    max_iter: Optional[int] = 1000,
    method: str = "auto",
    restart: int = 100,
    drop_tol: float = 1e-6,
    fill_factor: float = 25.0,
) -> Tuple[np.ndarray, SolveStats]:
    """
    Solves Ax = b to a relative 2-norm residual tolerance.

    Parameters:
        A: Square sparse (or dense) matrix.
        b (np.ndarray): Right-hand side.
        tol (float): Target ‖b - Ax‖₂ / ‖b‖₂.
        max_iter (int, optional): Krylov iteration cap per refinement sweep.
        method (str): "auto" (dense LU up to dimension 5000, else ILU-preconditioned
            GMRES run cycle by cycle, with SuperLU when the ILU fills in heavily or a
            restart cycle stops reducing the residual), "dense", "direct" (SuperLU),
            "gmres" or "bicgstab".
        restart (int): GMRES restart length.
        drop_tol (float): ILU drop tolerance.
        fill_factor (float): ILU fill factor.

    Returns:
        Tuple[np.ndarray, SolveStats]: Solution and statistics.

    Raises:
        ValueError: If A is not square, b does not match or method is unknown.
        NonConvergenceError: If an explicitly requested Krylov method misses tol.
    """
    if method not in METHODS:
        raise ValueError(f"Unknown method '{method}'; choose one of {METHODS}.")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}.")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"b has shape {b.shape}, expected ({A.shape[0]},).")
    A = sp.csr_matrix(A)
    n = A.shape[0]
    start = time.perf_counter()

    if not np.any(b):
        stats = SolveStats(0, 0.0, time.perf_counter() - start, method)
        return np.zeros(n), stats

    iterations = 0
    if method == "auto" and n > DENSE_LIMIT:
        x, iterations, residual, chosen = _auto_krylov(A, b, tol, max_iter, restart, drop_tol, fill_factor)
    elif method in ("auto", "dense", "direct"):
        chosen = "direct" if method == "direct" else "dense"
        x = _direct(A, b) if chosen == "direct" else scipy.linalg.solve(A.toarray(), b)
        residual = relative_residual(A, x, b)
    else:
        chosen = method
        x, iterations, residual = _krylov(A, b, chosen, tol, max_iter, restart, drop_tol, fill_factor)
        if residual > tol:
            raise NonConvergenceError(
                f"{chosen} reached relative residual {residual:.3e} > {tol:.1e} "
                f"after {iterations} iterations.",
                x=x,
                stats=SolveStats(iterations, residual, time.perf_counter() - start, chosen),
            )

    stats = SolveStats(iterations, residual, time.perf_counter() - start, chosen)
    logger.info(
        "Solved %d unknowns with %s: %d iterations, relative residual %.3e.",
        n, chosen, iterations, residual,
    )
    return x, stats


def _power_iteration(apply: Callable[[np.ndarray], np.ndarray], n: int, tol: float,
                     max_iter: int, rng: np.random.Generator, label: str) -> float:
    """Largest eigenvalue of a symmetric positive operator (Rayleigh quotient)."""
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        y = apply(x)
        new = float(x @ y)
        norm_y = np.linalg.norm(y)
        if not np.isfinite(norm_y) or norm_y == 0:
            raise EstimationError(f"{label} iteration broke down.")
        x = y / norm_y
        if abs(new - estimate) <= tol * abs(new):
            return new
        estimate = new
    logger.warning("%s iteration did not reach tol=%.1e in %d steps.", label, tol, max_iter)
    return estimate


def estimate_cond2(A, tol: float = 1e-3, max_iter: int = 2000, seed: int = 0) -> float:
    """
    2-norm condition number estimate σ_max / σ_min.

    σ_max² comes from power iteration on AᵀA, σ_min² from inverse iteration
    with one factorization of A.

    Raises:
        EstimationError: If A cannot be factorized or an iteration breaks down.
    """
    if A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise ValueError(f"A must be square and non-empty, got shape {A.shape}.")
    A = sp.csr_matrix(A)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    largest = _power_iteration(lambda x: A.T @ (A @ x), n, tol, max_iter, rng, "Power")
    try:
        solve_with = factorize(A)
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        raise EstimationError(f"Could not factorize the matrix: {exc}") from exc
    inverse = _power_iteration(lambda x: solve_with(solve_with(x, trans=True)), n, tol, max_iter, rng, "Inverse")
    if inverse <= 0 or largest <= 0:
        raise EstimationError("Non-positive extremal eigenvalue estimate.")
    cond = float(np.sqrt(largest * inverse))
    if not np.isfinite(cond):
        raise EstimationError("Condition estimate is not finite.")
    return cond
