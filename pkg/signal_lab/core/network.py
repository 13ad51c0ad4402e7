"""
Road network representation.

This module holds the road graph (intersections and directed road segments)
and everything derived from it:
- the thresholded Gaussian edge-weight matrix,
- the row-normalized transition matrix used by the diffusion modules,
- deterministic shortest-path routes for vehicles,
- the line-oriented network file format.

Network file format:

    # comment
    nodes N edges E
    node <id> <x> <y>          (N lines)
    edge <from> <to> <length>  (E lines)
"""

import heapq
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from signal_lab.config import LANES_PER_DIRECTION, SIGMA_MIN_SPREAD
from signal_lab.utils.io_utils import write_text_atomic


@dataclass(frozen=True)
class Intersection:
    """An intersection at (x, y) meters."""
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class RoadSegment:
    """A directed road segment between two intersections."""
    source: int
    target: int
    length: float
    lanes: int = LANES_PER_DIRECTION


class RoadNetwork:
    """
    A validated, immutable road graph.

    Invariants checked on construction:
    - node ids are unique and contiguous 0..N-1,
    - every edge references existing nodes and is not a self-loop,
    - every segment has a reverse twin of the same length,
    - the graph is connected.

    Example:
        >>> nodes = [Intersection(0, 0, 0), Intersection(1, 300, 0)]
        >>> edges = [RoadSegment(0, 1, 300), RoadSegment(1, 0, 300)]
        >>> RoadNetwork(nodes, edges).num_nodes
        2
    """

    def __init__(self, nodes: Sequence[Intersection], edges: Sequence[RoadSegment]):
        self._nodes = tuple(sorted(nodes, key=lambda n: n.id))
        self._edges = tuple(edges)
        self._validate()
        self._out: Dict[int, Tuple[Tuple[int, float], ...]] = {}
        lengths: Dict[Tuple[int, int], float] = {}
        for edge in self._edges:
            lengths[(edge.source, edge.target)] = edge.length
        for node in self._nodes:
            self._out[node.id] = tuple(sorted(
                (e.target, e.length) for e in self._edges if e.source == node.id
            ))
        self._lengths = lengths

    def _validate(self) -> None:
        ids = [n.id for n in self._nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("Invalid network: node ids are not unique.")
        if ids != list(range(len(ids))):
            raise ValueError(
                f"Invalid network: node ids must be contiguous 0..{len(ids) - 1}."
            )
        if len(ids) < 2:
            raise ValueError(
                "Invalid network: disconnected or degenerate graph "
                "(at least two connected intersections are required)."
            )
        seen: Dict[Tuple[int, int], float] = {}
        for edge in self._edges:
            for end in (edge.source, edge.target):
                if not 0 <= end < len(ids):
                    raise ValueError(
                        f"Invalid network: dangling edge {edge.source}->{edge.target} "
                        f"references unknown node {end}."
                    )
            if edge.source == edge.target:
                raise ValueError(f"Invalid network: self-loop on node {edge.source}.")
            if edge.length <= 0:
                raise ValueError(
                    f"Invalid network: edge {edge.source}->{edge.target} "
                    f"has non-positive length {edge.length}."
                )
            if (edge.source, edge.target) in seen:
                raise ValueError(
                    f"Invalid network: duplicate edge {edge.source}->{edge.target}."
                )
            seen[(edge.source, edge.target)] = edge.length
        for (source, target), length in seen.items():
            twin = seen.get((target, source))
            if twin is None:
                raise ValueError(
                    f"Invalid network: edge {source}->{target} has no reverse "
                    f"edge {target}->{source} (roads must be bidirectional)."
                )
            if abs(twin - length) > 1e-9:
                raise ValueError(
                    f"Invalid network: edges {source}->{target} ({length} m) and "
                    f"{target}->{source} ({twin} m) differ in length."
                )
        graph = nx.DiGraph()
        graph.add_nodes_from(ids)
        graph.add_edges_from(seen)
        if not nx.is_strongly_connected(graph):
            raise ValueError("Invalid network: the graph is disconnected.")

    @property
    def nodes(self) -> Tuple[Intersection, ...]:
        return self._nodes

    @property
    def edges(self) -> Tuple[RoadSegment, ...]:
        return self._edges

    @property
    def num_nodes(self) -> int:
        return len(self._nodes)

    def neighbors(self, node: int) -> Tuple[int, ...]:
        """Downstream neighbors of a node, ascending by id."""
        return tuple(target for target, _ in self._out[node])

    def out_edges(self, node: int) -> Tuple[Tuple[int, float], ...]:
        """(target, length) pairs of the segments leaving a node."""
        return self._out[node]

    def edge_length(self, source: int, target: int) -> float:
        """Length of the segment source->target in meters."""
        try:
            return self._lengths[(source, target)]
        except KeyError:
            raise ValueError(f"No road segment {source}->{target}.") from None

    def check_node(self, node: int) -> None:
        """Raises ValueError if node is not an intersection id."""
        if not 0 <= node < self.num_nodes:
            raise ValueError(
                f"Unknown intersection {node}. Valid ids: 0..{self.num_nodes - 1}."
            )

    def to_graph(self) -> nx.DiGraph:
        """The network as a weighted networkx DiGraph (weight = length)."""
        graph = nx.DiGraph()
        for node in self._nodes:
            graph.add_node(node.id, x=node.x, y=node.y)
        for edge in self._edges:
            graph.add_edge(edge.source, edge.target, weight=edge.length)
        return graph


#===============================================================================
#                               FILE FORMAT
#===============================================================================
def parse_network(text: str, source: str = '<network>') -> RoadNetwork:
    """
    Parses the network text format.

    Raises:
        ValueError: On a malformed line (message names the line number) or a
            network that breaks an invariant.
    """
    header: Optional[Tuple[int, int]] = None
    nodes: List[Intersection] = []
    edges: List[RoadSegment] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if header is None:
                if len(parts) != 4 or parts[0] != 'nodes' or parts[2] != 'edges':
                    raise ValueError("expected header 'nodes N edges E'")
                header = (int(parts[1]), int(parts[3]))
            elif parts[0] == 'node' and len(parts) == 4:
                nodes.append(Intersection(int(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == 'edge' and len(parts) == 4:
                edges.append(RoadSegment(int(parts[1]), int(parts[2]), float(parts[3])))
            else:
                raise ValueError("expected 'node <id> <x> <y>' or 'edge <from> <to> <length>'")
        except ValueError as exc:
            raise ValueError(f"{source}: line {number}: {exc} (got '{raw.strip()}')") from exc
    if header is None:
        raise ValueError(f"{source}: missing header 'nodes N edges E'")
    if len(nodes) != header[0] or len(edges) != header[1]:
        raise ValueError(
            f"{source}: header announces {header[0]} nodes and {header[1]} edges, "
            f"found {len(nodes)} nodes and {len(edges)} edges"
        )
    return RoadNetwork(nodes, edges)


def load_network(path: str) -> RoadNetwork:
    """
    Reads and validates a network file.

    Args:
        path (str): Path of a file in the network text format.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: Parse error with line number, or validation error naming
            the violated invariant.

    Returns:
        RoadNetwork: The validated network.
    """
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_network(handle.read(), path)


def format_network(net: RoadNetwork) -> str:
    """Renders a network in the text format (inverse of parse_network)."""
    lines = [f"nodes {net.num_nodes} edges {len(net.edges)}"]
    lines += [f"node {n.id} {n.x!r} {n.y!r}" for n in net.nodes]
    lines += [f"edge {e.source} {e.target} {e.length!r}" for e in net.edges]
    return '\n'.join(lines) + '\n'


def write_network(net: RoadNetwork, path: str) -> None:
    """Writes a network file (atomically) that load_network reads back."""
    write_text_atomic(path, format_network(net))


#===============================================================================
#                           WEIGHTS AND TRANSITIONS
#===============================================================================
@dataclass(frozen=True)
class WeightMatrix:
    """
    Symmetric N×N edge weights (0 on the diagonal and for unconnected pairs).

    Attributes:
        values (np.ndarray): exp(-dist^2 / sigma^2) on direct roads.
        log_values (np.ndarray): -dist^2 / sigma^2 on direct roads and -inf
            elsewhere, kept so rows can be normalized without underflow.
        sigma (float): Kernel width in meters.
    """
    values: np.ndarray
    log_values: np.ndarray
    sigma: float


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic N×N random-walk transition matrix."""
    values: np.ndarray


def default_sigma(net: RoadNetwork) -> float:
    """
    Kernel width: the standard deviation of all direct road distances, or the
    mean distance when the lengths are (nearly) uniform.

    The deviation is used only while it is at least SIGMA_MIN_SPREAD times
    the mean; a narrower kernel would drive every weight towards zero.

    Example:
        A uniform 300 m grid has zero deviation, so sigma is 300. Blocks of
        300, 300, 300 and 301 m give the mean, 300.25.
    """
    lengths = np.array([e.length for e in net.edges], dtype=float)
    mean = float(np.mean(lengths))
    deviation = float(np.std(lengths))
    if deviation < SIGMA_MIN_SPREAD * mean:
        return mean
    return deviation


def build_edge_weights(net: RoadNetwork, sigma: Optional[float] = None) -> WeightMatrix:
    """
    Thresholded Gaussian kernel over road distances.

    W(i, j) = exp(-dist(i, j)^2 / sigma^2) where a road connects i and j
    directly, and 0 otherwise (including the diagonal).

    Args:
        net (RoadNetwork): The road graph.
        sigma (Optional[float]): Kernel width in meters. None uses
            default_sigma(net).

    Raises:
        ValueError: If sigma is not positive.

    Returns:
        WeightMatrix: The weights.

    Example:
        On a uniform 300 m grid with sigma = 300 every connected pair has
        weight exp(-1) ≈ 0.367879.
    """
    if sigma is None:
        sigma = default_sigma(net)
    if not sigma > 0:
        raise ValueError(f"Invalid sigma '{sigma}'. Must be > 0.")
    log_values = np.full((net.num_nodes, net.num_nodes), -np.inf)
    for edge in net.edges:
        log_values[edge.source, edge.target] = -(edge.length ** 2) / sigma ** 2
    return WeightMatrix(values=np.exp(log_values), log_values=log_values, sigma=float(sigma))


def transition_matrix(weights: WeightMatrix) -> TransitionMatrix:
    """
    Divides every row of W by its row sum (the weighted out-degree).

    The division is done on log-weights shifted by the row maximum, so a
    node with at least one road always gets a proper distribution even when
    its raw weights underflow.

    Args:
        weights (WeightMatrix): Output of build_edge_weights.

    Raises:
        ValueError: If a row has no road (an isolated node).

    Returns:
        TransitionMatrix: Rows summing to one.
    """
    row_max = weights.log_values.max(axis=1)
    isolated = np.flatnonzero(np.isneginf(row_max))
    if isolated.size:
        raise ValueError(
            f"Node {int(isolated[0])} has no outgoing weight; "
            f"cannot build a transition matrix."
        )
    # Missing roads stay at exp(-inf) = 0.
    shifted = np.exp(weights.log_values - row_max[:, None])
    return TransitionMatrix(values=shifted / shifted.sum(axis=1, keepdims=True))


#===============================================================================
#                               ROUTING
#===============================================================================
def shortest_path(net: RoadNetwork, origin: int, dest: int) -> List[int]:
    """
    Minimum-length route from origin to dest (Dijkstra).

    Among equally short routes the lexicographically smallest node sequence
    wins, i.e. ties go to the smaller next-node id.

    Args:
        net (RoadNetwork): The road graph.
        origin (int): Start intersection.
        dest (int): End intersection.

    Raises:
        ValueError: If origin == dest, an id is unknown, or dest is unreachable.

    Returns:
        List[int]: Node ids from origin to dest inclusive.

    Example:
        Corner 0 to corner 15 of a 4×4 grid returns a 6-edge staircase.
    """
    net.check_node(origin)
    net.check_node(dest)
    if origin == dest:
        raise ValueError(f"Origin and destination are both {origin}.")
    # Heap entries carry the whole path so equal distances pop in lexicographic order.
    heap: List[Tuple[float, Tuple[int, ...]]] = [(0.0, (origin,))]
    settled = set()
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        if node == dest:
            return list(path)
        settled.add(node)
        for target, length in net.out_edges(node):
            if target not in settled:
                heapq.heappush(heap, (dist + length, path + (target,)))
    raise ValueError(f"Intersection {dest} is unreachable from {origin}.")


def hop_distances(net: RoadNetwork, source: int) -> Dict[int, int]:
    """Number of road segments from source to every node."""
    net.check_node(source)
    return dict(nx.single_source_shortest_path_length(net.to_graph(), source))
