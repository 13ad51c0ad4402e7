"""
Classical signal controllers that only look at their own intersection.

In this module:
- FixedTime: a cyclic plan with equal splits and a random offset per node.
- SOTL: self-organizing request/threshold switching.
- MaxPressure: the phase with the largest upstream minus downstream queue.
- Stateful wrappers with a common `decide(clock, observations)` interface.
"""

import abc
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from signal_lab.config import MALFUNCTION_OFF, NUM_PHASES, DECISION_INTERVAL_S, SOTL_THETA, SOTL_MIN_GREEN_S
from signal_lab.core.simulator import IntersectionObservation, PHASE_SLOTS, NUM_SLOTS, exit_side
from signal_lab.utils.math_utils import first_argmax

logger = logging.getLogger(__name__)


#===============================================================================
#                               PARAMETERS
#===============================================================================
@dataclass(frozen=True)
class FixedTimePlan:
    """
    Cyclic phase plan.

    Attributes:
        cycle: (phase, duration_s) pairs in order.
        offset: Seconds added to the clock before looking up the cycle.
        decision_interval_s: Every duration must be a positive multiple of it.
    """
    cycle: Tuple[Tuple[int, float], ...]
    offset: float = 0.0
    decision_interval_s: float = DECISION_INTERVAL_S

    def __post_init__(self):
        if not self.cycle:
            raise ValueError("A fixed-time plan needs at least one phase.")
        for phase, duration in self.cycle:
            if not 0 <= phase < NUM_PHASES:
                raise ValueError(f"Invalid phase {phase} in plan. Must be 0..{NUM_PHASES - 1}.")
            steps = duration / self.decision_interval_s
            if duration <= 0 or abs(steps - round(steps)) > 1e-9:
                raise ValueError(
                    f"Invalid phase duration {duration} s. Must be a positive multiple "
                    f"of the decision interval ({self.decision_interval_s} s)."
                )

    @classmethod
    def equal_splits(cls, split_s: float, offset: float = 0.0,
                     decision_interval_s: float = DECISION_INTERVAL_S) -> 'FixedTimePlan':
        """All eight phases in order, split_s seconds each."""
        return cls(tuple((phase, split_s) for phase in range(NUM_PHASES)),
                   offset, decision_interval_s)

    @property
    def length(self) -> float:
        return float(sum(duration for _, duration in self.cycle))


@dataclass(frozen=True)
class SotlParams:
    """Request threshold (vehicles) and minimum green time (seconds)."""
    theta: int = SOTL_THETA
    min_green_s: float = SOTL_MIN_GREEN_S
    decision_interval_s: float = DECISION_INTERVAL_S

    def __post_init__(self):
        if self.theta < 1:
            raise ValueError(f"Invalid SOTL threshold '{self.theta}'. Must be >= 1.")
        if self.min_green_s < self.decision_interval_s:
            raise ValueError(
                f"Invalid SOTL min-green '{self.min_green_s}'. "
                f"Must be >= the decision interval ({self.decision_interval_s} s)."
            )


#===============================================================================
#                               PURE RULES
#===============================================================================
def fixed_time_action(plan: FixedTimePlan, clock: float) -> int:
    """
    The phase active at (clock + offset) mod cycle length.

    Example:
        >>> plan = FixedTimePlan.equal_splits(20.0, offset=150.0)
        >>> fixed_time_action(plan, 20.0)
        0
    """
    position = (clock + plan.offset) % plan.length
    for phase, duration in plan.cycle:
        if position < duration - 1e-9:
            return phase
        position -= duration
    return plan.cycle[-1][0]


def phase_demand(incoming: Sequence[int]) -> np.ndarray:
    """Queued vehicles on the two green movements of each phase (8 values)."""
    incoming = np.asarray(incoming)
    return np.array([incoming[a] + incoming[b] for a, b in PHASE_SLOTS])


def sotl_action(obs: IntersectionObservation, params: SotlParams, elapsed_green: float) -> int:
    """
    Self-organizing switching.

    The current phase is kept while its green is younger than min-green. After
    that it switches to the competing phase with the largest demand (lowest
    index on ties) when some competing phase has at least theta vehicles, or
    when the current phase is empty and some competing phase is not.

    Args:
        obs (IntersectionObservation): The local observation.
        params (SotlParams): Threshold and min-green.
        elapsed_green (float): Seconds since the current phase started.

    Raises:
        ValueError: If the intersection is blacked out.

    Returns:
        int: The phase for the next interval.
    """
    current = obs.phase
    if current == MALFUNCTION_OFF:
        raise ValueError("SOTL cannot control a malfunctioning intersection.")
    if elapsed_green < params.min_green_s:
        return current
    demand = phase_demand(obs.incoming)
    competing = [(int(demand[p]), p) for p in range(NUM_PHASES) if p != current]
    best_demand = max(d for d, _ in competing)
    if best_demand >= params.theta or (demand[current] == 0 and best_demand > 0):
        return min(p for d, p in competing if d == best_demand)
    return current


def movement_downstream_queues(obs: IntersectionObservation) -> np.ndarray:
    """
    Vehicles waiting downstream of each of the 12 movements: the sum of the
    outgoing lanes on the side the movement exits to.
    """
    outgoing = np.asarray(obs.outgoing)
    by_side = [int(outgoing[side * 3:side * 3 + 3].sum()) for side in range(4)]
    return np.array([by_side[exit_side(slot)] for slot in range(NUM_SLOTS)])


def max_pressure_action(obs: IntersectionObservation, downstream: Sequence[int]) -> int:
    """
    argmax over phases of sum over green movements of (upstream - downstream),
    lowest index on ties.

    Example:
        With only the NT lane occupied, phase 0 (NT+ST) wins over phase 4
        (NT+NL) by the tie-break.
    """
    pressure = np.asarray(obs.incoming, dtype=float) - np.asarray(downstream, dtype=float)
    return first_argmax([pressure[a] + pressure[b] for a, b in PHASE_SLOTS])


#===============================================================================
#                               CONTROLLERS
#===============================================================================
class SignalController(abc.ABC):
    """Maps the observations at a decision time to one action per intersection."""

    def reset(self) -> None:
        """Forget per-episode state."""

    @abc.abstractmethod
    def decide(self, clock: float, observations: List[IntersectionObservation]) -> Dict[int, int]:
        raise NotImplementedError


class FixedTimeController(SignalController):
    """
    Equal-split fixed-time plans; each intersection gets an offset drawn once
    from the seed (a multiple of the decision interval within one cycle).
    """

    def __init__(self, num_nodes: int, split_s: float, seed: int = 0,
                 decision_interval_s: float = DECISION_INTERVAL_S):
        rng = np.random.default_rng(seed)
        base = FixedTimePlan.equal_splits(split_s, 0.0, decision_interval_s)
        slots = int(round(base.length / decision_interval_s))
        self.plans = [
            FixedTimePlan(base.cycle, float(rng.integers(slots)) * decision_interval_s,
                          decision_interval_s)
            for _ in range(num_nodes)
        ]

    def decide(self, clock, observations):
        return {node: MALFUNCTION_OFF if obs.phase == MALFUNCTION_OFF
                else fixed_time_action(self.plans[node], clock)
                for node, obs in enumerate(observations)}


class SotlController(SignalController):
    """SOTL with per-intersection green timers."""

    def __init__(self, params: SotlParams):
        self.params = params
        self._green_since: Dict[int, float] = {}

    def reset(self):
        self._green_since.clear()

    def decide(self, clock, observations):
        actions = {}
        for node, obs in enumerate(observations):
            if obs.phase == MALFUNCTION_OFF:
                actions[node] = MALFUNCTION_OFF
                self._green_since.pop(node, None)
                continue
            since = self._green_since.setdefault(node, clock)
            phase = sotl_action(obs, self.params, clock - since)
            if phase != obs.phase:
                self._green_since[node] = clock
            actions[node] = phase
        return actions


class MaxPressureController(SignalController):
    """MaxPressure on every functioning intersection."""

    def decide(self, clock, observations):
        return {node: MALFUNCTION_OFF if obs.phase == MALFUNCTION_OFF
                else max_pressure_action(obs, movement_downstream_queues(obs))
                for node, obs in enumerate(observations)}
