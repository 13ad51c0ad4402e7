"""
Synthetic scenarios: lattice road networks and steady random-OD flows.

In this module:
- generate_grid: rows × cols lattice with uniform block length.
- FlowSpec / generate_flow: evenly spaced departures, random origin and
  destination.
- split_flow: hour 1 for training, hour 2 (re-based to 0) for testing.
- select_malfunction_nodes: the most central intersections.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from signal_lab.config import ARRIVAL_RATE_PER_300S, DATASET_DURATION_S, HOUR_S, OD_POLICIES
from signal_lab.core.network import Intersection, RoadNetwork, RoadSegment, hop_distances
from signal_lab.core.simulator import FlowRecord

ARRIVAL_WINDOW_S = 300.0


def generate_grid(rows: int, cols: int, block_m: float) -> RoadNetwork:
    """
    Lattice network; node r * cols + c sits at (c * block, (rows - 1 - r) *
    block) so node 0 is the upper-left corner. Every neighbor pair is joined
    in both directions.

    Raises:
        ValueError: If rows or cols < 2 or block_m <= 0.

    Example:
        >>> net = generate_grid(4, 4, 300.0)
        >>> net.num_nodes, len(net.edges)
        (16, 48)
    """
    if rows < 2 or cols < 2:
        raise ValueError(f"Invalid grid {rows}x{cols}. Rows and cols must both be >= 2.")
    if block_m <= 0:
        raise ValueError(f"Invalid block length '{block_m}'. Must be > 0.")
    nodes = [Intersection(r * cols + c, c * block_m, (rows - 1 - r) * block_m)
             for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                edges += [RoadSegment(node, node + 1, block_m), RoadSegment(node + 1, node, block_m)]
            if r + 1 < rows:
                edges += [RoadSegment(node, node + cols, block_m), RoadSegment(node + cols, node, block_m)]
    return RoadNetwork(nodes, edges)


@dataclass(frozen=True)
class FlowSpec:
    """
    Steady arrivals.

    Attributes:
        rate: Vehicles per 300 s, network-wide.
        duration_s: Length of the flow.
        od_policy: 'all' draws origins and destinations from every node,
            'boundary' only from nodes with fewer than four neighbors.
        seed: Seed for the origin/destination draws.
    """
    rate: float = ARRIVAL_RATE_PER_300S
    duration_s: float = DATASET_DURATION_S
    od_policy: str = 'all'
    seed: int = 0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"Invalid arrival rate '{self.rate}'. Must be > 0.")
        if self.duration_s < 0:
            raise ValueError(f"Invalid duration '{self.duration_s}'. Must be >= 0.")
        if self.od_policy not in OD_POLICIES:
            raise ValueError(
                f"Invalid od_policy '{self.od_policy}'. Must be one of: {', '.join(OD_POLICIES)}"
            )

    @property
    def count(self) -> int:
        return int(round(self.rate * self.duration_s / ARRIVAL_WINDOW_S))


def od_candidates(net: RoadNetwork, policy: str) -> List[int]:
    if policy == 'boundary':
        return [node.id for node in net.nodes if len(net.neighbors(node.id)) < 4]
    return [node.id for node in net.nodes]


def generate_flow(net: RoadNetwork, spec: FlowSpec) -> List[FlowRecord]:
    """
    rate * duration / 300 vehicles, the n-th departing at n * duration / count,
    with origin and destination drawn uniformly (origin != destination).

    Example:
        The default 1200 vehicles per 300 s over 7200 s gives 28800 vehicles.
    """
    count = spec.count
    if count == 0:
        return []
    candidates = od_candidates(net, spec.od_policy)
    if len(candidates) < 2:
        raise ValueError(f"OD policy '{spec.od_policy}' leaves fewer than two candidate nodes.")
    rng = np.random.default_rng(spec.seed)
    spacing = spec.duration_s / count
    flow = []
    for n in range(count):
        origin = int(rng.integers(len(candidates)))
        dest = int(rng.integers(len(candidates) - 1))
        if dest >= origin:
            dest += 1
        flow.append(FlowRecord(candidates[origin], candidates[dest], n * spacing))
    return flow


def split_flow(flow: Sequence[FlowRecord], hour_s: float = HOUR_S) -> Tuple[List[FlowRecord], List[FlowRecord]]:
    """
    Splits a two-hour flow into the training hour and the test hour, whose
    departures are shifted to start at 0.
    """
    train = [r for r in flow if r.depart < hour_s]
    test = [FlowRecord(r.origin, r.dest, r.depart - hour_s)
            for r in flow if hour_s <= r.depart < 2 * hour_s]
    return train, test


def select_malfunction_nodes(net: RoadNetwork, count: int) -> Tuple[int, ...]:
    """
    The `count` most central intersections: smallest total hop distance to
    every other node first, ties by id.

    Example:
        On the 4×4 grid the single most central node is 5.
    """
    if not 0 <= count <= net.num_nodes:
        raise ValueError(f"Invalid malfunction count {count}. Must be in 0..{net.num_nodes}.")
    ranked = sorted(net.nodes, key=lambda node: (sum(hop_distances(net, node.id).values()), node.id))
    return tuple(sorted(node.id for node in ranked[:count]))
