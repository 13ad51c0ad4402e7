"""
Experiment metrics.

Throughput counts and the reduction ratio between a run without and a run
with malfunctioning signals.
"""

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class ExperimentMetrics:
    """
    Metrics of one evaluation run.

    Attributes:
        network_throughput: Trips completed in the window.
        intersection_throughput: Vehicles that fully crossed a focus
            intersection in the window, averaged over the focus set.
        accidents: Collisions at focus intersections in the window.
        reduction_ratio: Percent loss against the matching no-malfunction run
            (None when not applicable).
        seed: Seed of the replica.
        config_digest: Scenario digest of the run's settings.
    """
    network_throughput: int
    intersection_throughput: float
    accidents: int
    reduction_ratio: Optional[float] = None
    seed: Optional[int] = None
    config_digest: Optional[str] = None

    def __post_init__(self):
        if self.network_throughput < 0 or self.intersection_throughput < 0:
            raise ValueError("Throughputs cannot be negative.")


def reduction_ratio(no_malfunction: float, malfunction: float) -> Optional[float]:
    """
    Percent throughput lost when signals malfunction.

    RR = 100 * (T_noMal - T_mal) / T_noMal, undefined (None) when T_noMal is 0.

    Example:
        >>> round(reduction_ratio(538, 390), 1)
        27.5
    """
    if no_malfunction <= 0:
        return None
    return 100.0 * (no_malfunction - malfunction) / no_malfunction
