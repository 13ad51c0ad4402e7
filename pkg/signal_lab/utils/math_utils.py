"""
This module contains utility math functions that are needed for this project.

NOTE: - All vector work goes through numpy; the helpers here only pin down the
        conventions the rest of the code relies on (tie-breaking, weight
        initialization, finiteness checks, gradient comparison).
"""

from typing import Sequence

import numpy as np


def first_argmax(values: Sequence[float]) -> int:
    """Finds the index of the largest value, taking the lowest index on ties.

    Args:
        values (Sequence[float]): The values to compare.

    Returns:
        int: Index of the first maximum.

    Example:
        >>> first_argmax([1.0, 3.0, 3.0])
        1
    """
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        raise ValueError("Cannot take the argmax of an empty sequence.")
    return int(np.argmax(array))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Draws a (fan_out, fan_in) weight matrix uniformly in ±sqrt(6/(fan_in+fan_out)).

    Args:
        rng (np.random.Generator): Seeded generator.
        fan_in (int): Inputs of the layer.
        fan_out (int): Outputs of the layer.

    Returns:
        np.ndarray: The weight matrix.
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def ensure_finite(array: np.ndarray, name: str) -> None:
    """Raises ValueError if the array holds NaN or infinity.

    Args:
        array (np.ndarray): Values to check.
        name (str): Label used in the error message.
    """
    if not np.all(np.isfinite(array)):
        raise ValueError(f"Non-finite values in {name}.")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error between two gradient estimates.

    ||a - n|| / max(||a|| + ||n||, 1e-12), so two zero vectors compare as 0.

    Args:
        analytic (np.ndarray): Gradient from backpropagation.
        numeric (np.ndarray): Gradient from finite differences.

    Returns:
        float: The relative error.
    """
    a = np.ravel(np.asarray(analytic, dtype=float))
    n = np.ravel(np.asarray(numeric, dtype=float))
    scale = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def matrix_powers(matrix: np.ndarray, steps: int) -> np.ndarray:
    """Stacks matrix^1 ... matrix^steps into a (steps, N, N) array.

    Example:
        >>> matrix_powers(np.eye(2), 3).shape
        (3, 2, 2)
    """
    if steps < 1:
        raise ValueError(f"Invalid steps '{steps}'. Must be >= 1.")
    powers = np.empty((steps,) + matrix.shape)
    powers[0] = matrix
    for k in range(1, steps):
        powers[k] = powers[k - 1] @ matrix
    return powers
