"""
Tick-based queue simulator of signalized intersections.

Vehicles follow precomputed shortest-path routes. On a segment a vehicle first
travels at free-flow speed, then waits in the FIFO queue of its turn lane
(left, through or right) at the downstream intersection until a green
movement discharges it onto the next segment. A full downstream lane blocks
discharge instead of overflowing.

Blacked-out (malfunctioning) intersections have no phase. They serve one
approach at a time in round-robin order at a reduced rate, and every vehicle
that crosses may be hit by a vehicle on a conflicting movement that ignores
it (FoeIgnore), which blocks both lanes for a while and logs an accident.

Lane slots at an intersection are numbered approach * 3 + movement with
approaches N, E, S, W (clockwise) and movements L, T, R.

Flow file format: one line `veh <origin> <dest> <depart_s>` per vehicle.
"""

import bisect
import heapq
import logging
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Deque, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from signal_lab.config import SimConfig, MALFUNCTION_OFF, NUM_PHASES
from signal_lab.core.metrics import ExperimentMetrics
from signal_lab.core.network import RoadNetwork, shortest_path, load_network
from signal_lab.utils.io_utils import write_csv_atomic, write_text_atomic
from signal_lab.utils.time_utils import validate_window

logger = logging.getLogger(__name__)


#===============================================================================
#                          INTERSECTION GEOMETRY
#===============================================================================
APPROACHES = ('N', 'E', 'S', 'W')
MOVEMENTS = ('L', 'T', 'R')
NUM_SLOTS = len(APPROACHES) * len(MOVEMENTS)
LANE_LABELS = tuple(a + m for a in APPROACHES for m in MOVEMENTS)


def slot_of(label: str) -> int:
    """Lane slot of a label such as 'NT' or 'WL'."""
    return LANE_LABELS.index(label)


def exit_side(slot: int) -> int:
    """Side a movement leaves the intersection on (left +1, through +2, right +3)."""
    approach, movement = divmod(slot, 3)
    return (approach + movement + 1) % 4


# The fixed 8-phase table; right turns are always allowed.
PHASES = (
    ('NT', 'ST'), ('EL', 'WL'), ('ET', 'WT'), ('NL', 'SL'),
    ('NT', 'NL'), ('ST', 'SL'), ('ET', 'EL'), ('WT', 'WL'),
)
PHASE_SLOTS = tuple(tuple(slot_of(label) for label in phase) for phase in PHASES)
RIGHT_SLOTS = frozenset(slot_of(a + 'R') for a in APPROACHES)
GREEN_SLOTS = tuple(frozenset(slots) | RIGHT_SLOTS for slots in PHASE_SLOTS)


def _conflicts(slot_a: int, slot_b: int) -> bool:
    if slot_a // 3 == slot_b // 3:
        return False
    if exit_side(slot_a) == exit_side(slot_b):
        return True
    if slot_a in RIGHT_SLOTS or slot_b in RIGHT_SLOTS:
        return False
    return not any(slot_a in phase and slot_b in phase for phase in PHASE_SLOTS)


CONFLICTS = tuple(
    tuple(other for other in range(NUM_SLOTS) if _conflicts(slot, other))
    for slot in range(NUM_SLOTS)
)


def side_of(net: RoadNetwork, node: int, neighbor: int) -> int:
    """Side (index into APPROACHES) on which neighbor lies as seen from node."""
    here = net.nodes[node]
    there = net.nodes[neighbor]
    dx, dy = there.x - here.x, there.y - here.y
    if abs(dy) >= abs(dx):
        return 0 if dy > 0 else 2
    return 1 if dx > 0 else 3


def approach_sides(net: RoadNetwork) -> Dict[Tuple[int, int], int]:
    """
    Maps (node, neighbor) to the side the neighbor is on.

    Raises:
        ValueError: If two roads enter an intersection from the same side.
    """
    sides: Dict[Tuple[int, int], int] = {}
    for node in net.nodes:
        used: Dict[int, int] = {}
        for neighbor in net.neighbors(node.id):
            side = side_of(net, node.id, neighbor)
            if side in used:
                raise ValueError(
                    f"Intersection {node.id} has roads from {used[side]} and "
                    f"{neighbor} on the same side ({APPROACHES[side]})."
                )
            used[side] = neighbor
            sides[(node.id, neighbor)] = side
    return sides


def incoming_lane_capacities(net: RoadNetwork, config: SimConfig) -> np.ndarray:
    """
    N×12 lane capacities of every intersection's incoming lanes (0 where no
    road enters).
    """
    sides = approach_sides(net)
    capacities = np.zeros((net.num_nodes, NUM_SLOTS))
    for edge in net.edges:
        side = sides[(edge.target, edge.source)]
        capacity = config.lane_capacity(edge.length)
        for movement in range(3):
            capacities[edge.target, side * 3 + movement] = capacity
    return capacities


#===============================================================================
#                               DATA TYPES
#===============================================================================
@dataclass(frozen=True)
class FlowRecord:
    """One vehicle: origin, destination and departure time in seconds."""
    origin: int
    dest: int
    depart: float


@dataclass(frozen=True)
class IntersectionObservation:
    """
    Local state of one intersection.

    Attributes:
        phase: Current phase index, or MALFUNCTION_OFF.
        incoming: Vehicles on each of the 12 incoming lanes.
        outgoing: Vehicles on each of the 12 outgoing lanes, grouped by the
            side they leave on (same slot layout as incoming).
    """
    phase: int
    incoming: np.ndarray
    outgoing: np.ndarray


@dataclass(frozen=True)
class StepStats:
    """What happened during one decision interval."""
    clock: float
    finished: int
    served: int
    accidents: int
    in_network: int


@dataclass(frozen=True)
class StepResult:
    """
    Outcome of one decision interval.

    Attributes:
        observations: One observation per intersection, by node id.
        rewards: Local reward (negative pressure) per intersection.
        stats: Counters for the interval.
    """
    observations: List[IntersectionObservation]
    rewards: np.ndarray
    stats: StepStats


@dataclass(frozen=True)
class Accident:
    """
    A FoeIgnore collision.

    Attributes:
        time_s: Simulated time of the collision.
        intersection: Where it happened.
        lane_a / lane_b: Labels of the two conflicting movements
            (e.g. 'NT' and 'EL').
    """
    time_s: float
    intersection: int
    lane_a: str
    lane_b: str


class VehicleStatus(IntEnum):
    STAGED = 0
    WAITING = 1
    TRAVELING = 2
    QUEUED = 3
    CRASHED = 4
    FINISHED = 5
    REMOVED = 6


def local_reward(obs: IntersectionObservation) -> float:
    """
    Negative pressure of an intersection.

    reward = -|sum(incoming) - sum(outgoing)|, always <= 0.

    Example:
        Incoming (3, 3, 1, 2, 0, ...) and outgoing (1, 1, 3, 2, 0, ...) give
        pressure |9 - 7| = 2 and reward -2.
    """
    return -float(abs(int(np.sum(obs.incoming)) - int(np.sum(obs.outgoing))))


#===============================================================================
#                               FLOW FILES
#===============================================================================
def parse_flow(text: str, source: str = '<flow>') -> List[FlowRecord]:
    """Parses `veh <origin> <dest> <depart_s>` lines ('#' comments allowed)."""
    records = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != 'veh':
            raise ValueError(
                f"{source}: line {number}: expected 'veh <origin> <dest> <depart_s>', "
                f"got '{raw.strip()}'"
            )
        try:
            records.append(FlowRecord(int(parts[1]), int(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise ValueError(f"{source}: line {number}: {exc}") from exc
    return records


def load_flow(path: str) -> List[FlowRecord]:
    """
    Reads a flow file.

    Args:
        path (str): File of `veh <origin> <dest> <depart_s>` lines.

    Raises:
        FileNotFoundError: If path does not exist.
        ValueError: On a malformed line (the message names the line).

    Returns:
        List[FlowRecord]: The vehicles in file order.
    """
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_flow(handle.read(), path)


def format_flow(flow: Iterable[FlowRecord]) -> str:
    """
    One `veh` line per record. Departure times use repr() so they load back
    exactly.

    Example:
        >>> format_flow([FlowRecord(0, 15, 2.5)])
        'veh 0 15 2.5\\n'
    """
    return ''.join(f"veh {r.origin} {r.dest} {r.depart!r}\n" for r in flow)


def write_flow(flow: Iterable[FlowRecord], path: str) -> None:
    """Writes a flow file (atomically) that load_flow reads back."""
    write_text_atomic(path, format_flow(flow))


#===============================================================================
#                               SIMULATOR
#===============================================================================
class TrafficSimulator:
    """
    Deterministic queue simulator owning one replica's full state.

    Args:
        net (RoadNetwork): The road graph.
        flow (Sequence[FlowRecord]): Vehicles to insert.
        config (Optional[SimConfig]): Simulator settings.

    Raises:
        ValueError: If a flow record names an unknown node, has origin ==
            destination, or departs before time 0.

    Example:
        >>> sim = TrafficSimulator(net, [FlowRecord(0, 15, 0.0)])
        >>> result = sim.step({node: 0 for node in range(net.num_nodes)})
        >>> result.stats.clock
        10.0
    """

    def __init__(self, net: RoadNetwork, flow: Sequence[FlowRecord],
                 config: Optional[SimConfig] = None):
        self.net = net
        self.config = config if config else SimConfig()
        self.clock = 0.0
        self._rng = np.random.default_rng(self.config.seed)
        self._sides = approach_sides(net)
        self._build_lanes()
        self._stage_flow(flow)

        n = net.num_nodes
        self.phases: List[int] = [0] * n
        self.malfunctioning: FrozenSet[int] = frozenset()
        self._rr_pointer = [0] * n
        self._served_times: List[List[float]] = [[] for _ in range(n)]
        self._finished_times: List[float] = []
        self.accidents: List[Accident] = []
        self._crashes: List[Tuple[float, int, int, int, int]] = []
        self.generated = 0
        self.finished = 0
        self.crashed_removed = 0
        self._crashed_pending = 0
        self._seq = 0

    @classmethod
    def from_files(cls, network_path: str, flow_path: str,
                   config: Optional[SimConfig] = None) -> 'TrafficSimulator':
        return cls(load_network(network_path), load_flow(flow_path), config)

    def _build_lanes(self) -> None:
        net, cfg = self.net, self.config
        self._segment: Dict[Tuple[int, int], int] = {}
        self._travel_s: List[float] = []
        capacities: List[int] = []
        for index, edge in enumerate(net.edges):
            self._segment[(edge.source, edge.target)] = index
            self._travel_s.append(edge.length / cfg.speed_ms)
            capacities += [cfg.lane_capacity(edge.length)] * 3
        self._lane_capacity = capacities
        self._lane_count = [0] * len(capacities)
        self._queues: List[Deque[int]] = [deque() for _ in capacities]
        self._acc = [0.0] * len(capacities)
        self._blocked_until = [float('-inf')] * len(capacities)
        self._in_lanes = [[-1] * NUM_SLOTS for _ in range(net.num_nodes)]
        self._out_lanes = [[-1] * NUM_SLOTS for _ in range(net.num_nodes)]
        for edge in net.edges:
            index = self._segment[(edge.source, edge.target)]
            in_side = self._sides[(edge.target, edge.source)]
            out_side = self._sides[(edge.source, edge.target)]
            for movement in range(3):
                self._in_lanes[edge.target][in_side * 3 + movement] = index * 3 + movement
                self._out_lanes[edge.source][out_side * 3 + movement] = index * 3 + movement
        self._waiting: Dict[int, Deque[int]] = {}
        self._traveling: List[Tuple[float, int, int]] = []

    def _stage_flow(self, flow: Sequence[FlowRecord]) -> None:
        unknown = [i for i, r in enumerate(flow)
                   if not (0 <= r.origin < self.net.num_nodes and 0 <= r.dest < self.net.num_nodes)]
        if unknown:
            raise ValueError(f"Flow records reference unknown nodes: indices {unknown[:20]}")
        same = [i for i, r in enumerate(flow) if r.origin == r.dest]
        if same:
            raise ValueError(f"Flow records with origin == destination: indices {same[:20]}")
        early = [i for i, r in enumerate(flow) if r.depart < 0]
        if early:
            raise ValueError(f"Flow records with negative departure time: indices {early[:20]}")
        self._flow = sorted(flow, key=lambda r: r.depart)
        routes: Dict[Tuple[int, int], Tuple[int, ...]] = {}
        self._route: List[Tuple[int, ...]] = []
        for record in self._flow:
            key = (record.origin, record.dest)
            if key not in routes:
                routes[key] = tuple(shortest_path(self.net, *key))
            self._route.append(routes[key])
        count = len(self._flow)
        self._pos = [0] * count
        self._lane = [-1] * count
        self._status = [VehicleStatus.STAGED] * count
        self._next_departure = 0

    #===========================================================================
    #                           PUBLIC OPERATIONS
    #===========================================================================
    def inject_malfunction(self, nodes: Iterable[int]) -> None:
        """
        Replaces the set of malfunctioning intersections. They black out from
        the next tick; intersections leaving the set resume at phase 0.

        Raises:
            ValueError: On an unknown intersection id.
        """
        nodes = frozenset(int(node) for node in nodes)
        for node in nodes:
            self.net.check_node(node)
        for node in self.malfunctioning - nodes:
            self.phases[node] = 0
        for node in nodes:
            self.phases[node] = MALFUNCTION_OFF
        self.malfunctioning = nodes
        logger.debug("malfunctioning intersections: %s", sorted(nodes))

    def step(self, actions: Mapping[int, int],
             on_tick: Optional[Callable[['TrafficSimulator'], None]] = None) -> StepResult:
        """
        Applies the actions and advances one decision interval.

        Args:
            actions (Mapping[int, int]): Phase per intersection. Malfunctioning
                intersections must get MALFUNCTION_OFF; intersections without an
                entry keep their phase.
            on_tick (Optional[Callable]): Called after every tick (invariant checks).

        Raises:
            ValueError: For an unknown intersection, an invalid phase, or a
                phase given to a malfunctioning intersection.

        Returns:
            StepResult: Observations, local rewards and step statistics.
        """
        self._apply_actions(actions)
        finished, accidents = self.finished, len(self.accidents)
        served = sum(len(times) for times in self._served_times)
        for _ in range(self.config.ticks_per_decision):
            self._tick()
            if on_tick is not None:
                on_tick(self)
        observations = self.observe()
        rewards = np.array([local_reward(obs) for obs in observations])
        stats = StepStats(
            clock=self.clock,
            finished=self.finished - finished,
            served=sum(len(times) for times in self._served_times) - served,
            accidents=len(self.accidents) - accidents,
            in_network=self.in_network(),
        )
        return StepResult(observations, rewards, stats)

    def observe(self) -> List[IntersectionObservation]:
        """Current observation of every intersection, indexed by node id."""
        counts = self._lane_count
        observations = []
        for node in range(self.net.num_nodes):
            incoming = np.array([counts[lane] if lane >= 0 else 0
                                 for lane in self._in_lanes[node]], dtype=np.int64)
            outgoing = np.array([counts[lane] if lane >= 0 else 0
                                 for lane in self._out_lanes[node]], dtype=np.int64)
            observations.append(IntersectionObservation(self.phases[node], incoming, outgoing))
        return observations

    def incoming_capacities(self) -> np.ndarray:
        """N×12 capacities of the incoming lanes (0 where no road enters)."""
        return np.array([[self._lane_capacity[lane] if lane >= 0 else 0
                          for lane in lanes] for lanes in self._in_lanes], dtype=float)

    def metrics(self, window: Tuple[float, float], focus: Iterable[int]) -> ExperimentMetrics:
        """
        Throughput and accidents in a [start, end) window.

        Args:
            window (Tuple[float, float]): Simulated-time window.
            focus (Iterable[int]): Intersections for the intersection-level
                numbers.

        Raises:
            ValueError: If the window reaches past the clock, or focus is empty.

        Returns:
            ExperimentMetrics: Completed trips, mean crossings per focus
            intersection and accidents at focus intersections.
        """
        validate_window(window, self.clock)
        focus = sorted(set(int(node) for node in focus))
        if not focus:
            raise ValueError("The focus set is empty; intersection throughput needs at least one node.")
        for node in focus:
            self.net.check_node(node)
        start, end = window
        network = _count_in(self._finished_times, start, end)
        crossings = [_count_in(self._served_times[node], start, end) for node in focus]
        accidents = sum(1 for a in self.accidents
                        if a.intersection in focus and start <= a.time_s < end)
        return ExperimentMetrics(
            network_throughput=network,
            intersection_throughput=float(np.mean(crossings)),
            accidents=accidents,
        )

    def in_network(self) -> int:
        """Vehicles generated but neither finished nor removed after a crash."""
        waiting = sum(len(q) for q in self._waiting.values())
        queued = sum(len(q) for q in self._queues)
        return waiting + len(self._traveling) + queued + self._crashed_pending

    def check_conservation(self) -> bool:
        """generated == finished + crashed-removed + in-network."""
        return self.generated == self.finished + self.crashed_removed + self.in_network()

    def served_count(self, node: int) -> int:
        """Vehicles that fully crossed an intersection so far."""
        return len(self._served_times[node])

    def lane_overflow(self) -> bool:
        """True if any lane holds more vehicles than its capacity."""
        return any(count > cap for count, cap in zip(self._lane_count, self._lane_capacity))

    def accident_rows(self) -> List[Tuple[float, int, str, str]]:
        """
        The accident log as (time_s, intersection, lane_a, lane_b) tuples in
        the order the collisions happened.
        """
        return [(a.time_s, a.intersection, a.lane_a, a.lane_b) for a in self.accidents]

    def write_accident_log(self, path: str) -> None:
        """Exports the accident log as CSV `time_s,intersection,lane_a,lane_b`."""
        write_csv_atomic(path, ('time_s', 'intersection', 'lane_a', 'lane_b'),
                         self.accident_rows())

    #===========================================================================
    #                              TICK LOGIC
    #===========================================================================
    def _apply_actions(self, actions: Mapping[int, int]) -> None:
        for node, action in actions.items():
            node, action = int(node), int(action)
            if not 0 <= node < self.net.num_nodes:
                raise ValueError(f"Action given for unknown intersection {node}.")
            if node in self.malfunctioning:
                if action != MALFUNCTION_OFF:
                    raise ValueError(
                        f"Intersection {node} is malfunctioning; its action must be "
                        f"MALFUNCTION_OFF ({MALFUNCTION_OFF}), got {action}."
                    )
                continue
            if not 0 <= action < NUM_PHASES:
                raise ValueError(
                    f"Invalid phase {action} for intersection {node}. "
                    f"Must be 0..{NUM_PHASES - 1}."
                )
            self.phases[node] = action

    def _tick(self) -> None:
        now = self.clock
        self._release_collisions(now)
        self._depart(now)
        self._arrive(now)
        for node in range(self.net.num_nodes):
            if node in self.malfunctioning:
                self._discharge_blackout(node, now)
            else:
                self._discharge_signal(node, now)
        self._enter_waiting(now)
        self.clock = now + self.config.tick_s

    def _release_collisions(self, now: float) -> None:
        remaining = []
        for crash in self._crashes:
            release, lane_a, lane_b, vid_a, vid_b = crash
            if release > now:
                remaining.append(crash)
                continue
            for lane, vid in ((lane_a, vid_a), (lane_b, vid_b)):
                self._lane_count[lane] -= 1
                self._status[vid] = VehicleStatus.REMOVED
            self._crashed_pending -= 2
            self.crashed_removed += 2
        self._crashes = remaining

    def _depart(self, now: float) -> None:
        while (self._next_departure < len(self._flow)
               and self._flow[self._next_departure].depart <= now + 1e-9):
            vid = self._next_departure
            self._next_departure += 1
            self.generated += 1
            lane = self._target_lane(vid, 0)
            self._waiting.setdefault(lane, deque()).append(vid)
            self._status[vid] = VehicleStatus.WAITING

    def _arrive(self, now: float) -> None:
        while self._traveling and self._traveling[0][0] <= now + 1e-9:
            _, _, vid = heapq.heappop(self._traveling)
            lane = self._lane[vid]
            if self._pos[vid] + 2 == len(self._route[vid]):
                self._lane_count[lane] -= 1
                self._status[vid] = VehicleStatus.FINISHED
                self.finished += 1
                self._finished_times.append(now)
            else:
                self._queues[lane].append(vid)
                self._status[vid] = VehicleStatus.QUEUED

    def _discharge_signal(self, node: int, now: float) -> None:
        green = GREEN_SLOTS[self.phases[node]]
        rate = self.config.discharge_rate
        for slot, lane in enumerate(self._in_lanes[node]):
            if lane < 0:
                continue
            queue = self._queues[lane]
            if slot not in green or not queue or self._blocked_until[lane] > now:
                self._acc[lane] = 0.0
                continue
            self._acc[lane] += rate
            while self._acc[lane] >= 1.0 and queue:
                target = self._target_lane(queue[0], self._pos[queue[0]] + 1)
                if self._lane_count[target] >= self._lane_capacity[target]:
                    break
                self._cross(node, queue.popleft(), target, now)
                self._acc[lane] -= 1.0
            self._acc[lane] = min(self._acc[lane], 1.0)

    def _discharge_blackout(self, node: int, now: float) -> None:
        approach = self._served_approach(node, now)
        if approach is None:
            return
        rate = self.config.discharge_rate * self.config.malfunction_capacity_factor
        progressed = False
        for slot in range(approach * 3, approach * 3 + 3):
            lane = self._in_lanes[node][slot]
            if lane < 0:
                continue
            queue = self._queues[lane]
            if not queue or self._blocked_until[lane] > now:
                self._acc[lane] = 0.0
                continue
            self._acc[lane] += rate
            while self._acc[lane] >= 1.0 and queue:
                target = self._target_lane(queue[0], self._pos[queue[0]] + 1)
                if self._lane_count[target] >= self._lane_capacity[target]:
                    progressed = True
                    break
                foe = self._foe_ignoring(node, slot, now)
                progressed = True
                if foe is not None:
                    self._collide(node, slot, foe, now)
                    self._acc[lane] = 0.0
                    break
                self._cross(node, queue.popleft(), target, now)
                self._acc[lane] -= 1.0
            self._acc[lane] = min(self._acc[lane], 1.0)
        if progressed:
            self._rr_pointer[node] = (approach + 1) % 4

    def _served_approach(self, node: int, now: float) -> Optional[int]:
        """First approach from the round-robin pointer with a movable vehicle."""
        start = self._rr_pointer[node]
        lanes = self._in_lanes[node]
        for offset in range(4):
            approach = (start + offset) % 4
            for slot in range(approach * 3, approach * 3 + 3):
                lane = lanes[slot]
                if lane >= 0 and self._queues[lane] and self._blocked_until[lane] <= now:
                    self._rr_pointer[node] = approach
                    return approach
        return None

    def _foe_ignoring(self, node: int, slot: int, now: float) -> Optional[int]:
        """Slot of a conflicting vehicle that ignores the crossing one, if any."""
        prob = self.config.foe_ignore_prob
        if prob <= 0:
            return None
        for other in CONFLICTS[slot]:
            lane = self._in_lanes[node][other]
            if lane < 0 or not self._queues[lane] or self._blocked_until[lane] > now:
                continue
            if self._rng.random() < prob:
                return other
        return None

    def _collide(self, node: int, slot: int, other: int, now: float) -> None:
        lane_a = self._in_lanes[node][slot]
        lane_b = self._in_lanes[node][other]
        vid_a = self._queues[lane_a].popleft()
        vid_b = self._queues[lane_b].popleft()
        self._status[vid_a] = VehicleStatus.CRASHED
        self._status[vid_b] = VehicleStatus.CRASHED
        release = now + self.config.collision_block_s
        for lane in (lane_a, lane_b):
            self._blocked_until[lane] = max(self._blocked_until[lane], release)
            self._acc[lane] = 0.0
        self._crashes.append((release, lane_a, lane_b, vid_a, vid_b))
        self._crashed_pending += 2
        self.accidents.append(Accident(now, node, LANE_LABELS[slot], LANE_LABELS[other]))
        logger.debug("collision at %s t=%.0f between %s and %s",
                     node, now, LANE_LABELS[slot], LANE_LABELS[other])

    def _cross(self, node: int, vid: int, target: int, now: float) -> None:
        self._lane_count[self._lane[vid]] -= 1
        self._pos[vid] += 1
        self._put_on_segment(vid, target, now + self.config.startup_loss_s)
        self._served_times[node].append(now)

    def _enter_waiting(self, now: float) -> None:
        for lane in sorted(self._waiting):
            queue = self._waiting[lane]
            while queue and self._lane_count[lane] < self._lane_capacity[lane]:
                self._put_on_segment(queue.popleft(), lane, now)
            if not queue:
                del self._waiting[lane]

    def _put_on_segment(self, vid: int, lane: int, start: float) -> None:
        self._lane_count[lane] += 1
        self._lane[vid] = lane
        self._status[vid] = VehicleStatus.TRAVELING
        self._seq += 1
        arrival = start + self._travel_s[lane // 3]
        heapq.heappush(self._traveling, (arrival, self._seq, vid))

    def _target_lane(self, vid: int, pos: int) -> int:
        """Lane a vehicle uses on the segment starting at route[pos]."""
        route = self._route[vid]
        here, there = route[pos], route[pos + 1]
        segment = self._segment[(here, there)]
        if pos + 2 == len(route):
            return segment * 3 + 1  # last segment: the trip ends at `there`
        approach = self._sides[(there, here)]
        leave = self._sides[(there, route[pos + 2])]
        movement = (leave - approach) % 4 - 1
        return segment * 3 + movement


def _count_in(times: List[float], start: float, end: float) -> int:
    """Number of sorted timestamps in [start, end)."""
    return bisect.bisect_left(times, end) - bisect.bisect_left(times, start)
