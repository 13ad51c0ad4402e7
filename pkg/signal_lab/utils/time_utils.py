"""
This module contains functions for converting between simulated seconds,
ticks, decision steps and the hour windows used by the datasets.
"""

from typing import Tuple

from signal_lab.config import HOUR_S


def decision_steps(duration_s: float, interval_s: float) -> int:
    """
    Number of whole decision intervals in a duration.

    Args:
        duration_s (float): Simulated time in seconds.
        interval_s (float): Seconds per decision.

    Returns:
        int: The number of decisions.

    Example:
        >>> decision_steps(3600, 10)
        360
    """
    if interval_s <= 0:
        raise ValueError(f"Invalid interval '{interval_s}'. Must be > 0.")
    # Small tolerance so 3600 / 10 never lands on 359.99999.
    return int(duration_s / interval_s + 1e-9)


def hour_window(hour_index: int) -> Tuple[float, float]:
    """
    The [start, end) window of an hour of simulated time.

    Example:
        >>> hour_window(1)
        (3600.0, 7200.0)
    """
    if hour_index < 0:
        raise ValueError(f"Invalid hour index '{hour_index}'. Must be >= 0.")
    return hour_index * HOUR_S, (hour_index + 1) * HOUR_S


def validate_window(window: Tuple[float, float], clock: float) -> None:
    """
    Checks that a [start, end) window lies inside the simulated time [0, clock].

    Raises:
        ValueError: If the window is inverted or reaches past the clock.
    """
    start, end = window
    if start < 0 or end < start:
        raise ValueError(f"Invalid window ({start}, {end}). Need 0 <= start <= end.")
    if end > clock + 1e-9:
        raise ValueError(
            f"Invalid window ({start}, {end}). "
            f"The simulation has only reached {clock} s."
        )
