from typing import Any, Optional, Sequence, Tuple

import numpy as np


class ConfigurationError(ValueError):
    """Raised when boundary data or a study configuration is missing or inconsistent."""


class CertificationError(RuntimeError):
    """Raised when an exact-rational stencil check fails."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class DerivationError(RuntimeError):
    """Raised when the undetermined-coefficient system has no solution."""

    def __init__(self, message: str, violated_rows: Sequence[str] = ()):
        super().__init__(message)
        self.violated_rows = list(violated_rows)


class NonConvergenceError(RuntimeError):
    """Raised when an iterative solve misses its tolerance; keeps the best iterate."""

    def __init__(self, message: str, x: Optional[np.ndarray] = None, stats: Any = None):
        super().__init__(message)
        self.x = x
        self.stats = stats


class EstimationError(RuntimeError):
    """Raised when a condition-number estimate cannot be computed."""


def validate_dim(dim: int, expected_dims=(2, 3), var_name="dim") -> int:
    """
    Validates a spatial dimension against the supported set.

    Parameters:
        dim (int): The dimension to validate.
        expected_dims (tuple): Acceptable dimensions.
        var_name (str, optional): The name used in the error message. Defaults to "dim".

    Returns:
        int: The validated dimension.

    Raises:
        ValueError: If dim is not one of expected_dims.
    """
    if dim not in expected_dims:
        raise ValueError(
            f"{var_name} must be {' or '.join(map(str, expected_dims))}, got {dim}."
        )
    return dim


def validate_index(idx: Sequence[int], n: Sequence[int], var_name="idx") -> Tuple[int, ...]:
    """
    Validates a grid multi-index against per-axis cell counts (0 <= idx[a] <= n[a]).

    Parameters:
        idx (Sequence[int]): Multi-index to validate.
        n (Sequence[int]): Per-axis cell counts.
        var_name (str, optional): The name used in the error message.

    Returns:
        Tuple[int, ...]: The index as a tuple of python ints.

    Raises:
        ValueError: If the index has the wrong length or lies outside the grid.
    """
    idx = tuple(int(i) for i in idx)
    if len(idx) != len(n):
        raise ValueError(f"{var_name} must have {len(n)} components, got {len(idx)}.")
    for axis, (i, na) in enumerate(zip(idx, n)):
        if not 0 <= i <= na:
            raise ValueError(
                f"{var_name}[{axis}]={i} is outside the grid range [0, {na}]."
            )
    return idx


def observed_order(coarse_error: Optional[float], fine_error: Optional[float]) -> Optional[float]:
    """log2 of the error ratio between spacing 2h and h; None when undefined."""
    if coarse_error is None or fine_error is None:
        return None
    if coarse_error <= 0 or fine_error <= 0:
        return None
    return float(np.log2(coarse_error / fine_error))
