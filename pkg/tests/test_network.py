"""
Tests for the road network: validation, the file format, edge weights, the
transition matrix and routing.
"""

import os
import tempfile
import unittest

import networkx as nx
import numpy as np

from signal_lab.core.network import (
    Intersection, RoadSegment, RoadNetwork, parse_network, load_network,
    write_network, build_edge_weights, transition_matrix, default_sigma,
    shortest_path, hop_distances,
)
from signal_lab.experiment.datasets import generate_grid


def route_length(net: RoadNetwork, path) -> float:
    return sum(net.edge_length(a, b) for a, b in zip(path, path[1:]))


def two_node_network(length: float = 300.0) -> RoadNetwork:
    nodes = [Intersection(0, 0.0, 0.0), Intersection(1, length, 0.0)]
    edges = [RoadSegment(0, 1, length), RoadSegment(1, 0, length)]
    return RoadNetwork(nodes, edges)


def square_network(lengths) -> RoadNetwork:
    """Four intersections in a ring 0-1-3-2 with the given road lengths."""
    nodes = [Intersection(0, 0.0, 0.0), Intersection(1, 300.0, 0.0),
             Intersection(2, 0.0, 300.0), Intersection(3, 300.0, 300.0)]
    edges = []
    for (a, b), length in zip(((0, 1), (0, 2), (1, 3), (2, 3)), lengths):
        edges += [RoadSegment(a, b, length), RoadSegment(b, a, length)]
    return RoadNetwork(nodes, edges)


def random_network(rng: np.random.Generator, size: int) -> RoadNetwork:
    """A random tree plus a few extra roads, with random lengths."""
    nodes = [Intersection(i, float(i), 0.0) for i in range(size)]
    pairs = {(int(rng.integers(i)), i) for i in range(1, size)}
    for _ in range(size // 2):
        a, b = (int(v) for v in rng.integers(size, size=2))
        if a != b:
            pairs.add((min(a, b), max(a, b)))
    edges = []
    for a, b in sorted(pairs):
        length = float(rng.uniform(50.0, 800.0))
        edges += [RoadSegment(a, b, length), RoadSegment(b, a, length)]
    return RoadNetwork(nodes, edges)


class TestValidation(unittest.TestCase):
    """Tests the invariants checked when a network is built."""

    def test_two_nodes(self):
        """Two intersections joined both ways form a valid network."""
        net = two_node_network()
        self.assertEqual(net.num_nodes, 2)
        self.assertEqual(net.neighbors(0), (1,))
        self.assertEqual(net.edge_length(1, 0), 300.0)

    def test_missing_reverse_edge(self):
        """One-way roads are rejected."""
        nodes = [Intersection(0, 0, 0), Intersection(1, 300, 0)]
        with self.assertRaises(ValueError) as ctx:
            RoadNetwork(nodes, [RoadSegment(0, 1, 300)])
        self.assertIn('reverse', str(ctx.exception))

    def test_dangling_edge(self):
        """An edge to an unknown node is rejected."""
        nodes = [Intersection(0, 0, 0), Intersection(1, 300, 0)]
        edges = [RoadSegment(0, 1, 300), RoadSegment(1, 0, 300), RoadSegment(1, 7, 300)]
        with self.assertRaises(ValueError) as ctx:
            RoadNetwork(nodes, edges)
        self.assertIn('dangling', str(ctx.exception))

    def test_disconnected(self):
        """Two separate pairs are not one network."""
        nodes = [Intersection(i, 300 * i, 0) for i in range(4)]
        edges = [RoadSegment(0, 1, 300), RoadSegment(1, 0, 300),
                 RoadSegment(2, 3, 300), RoadSegment(3, 2, 300)]
        with self.assertRaises(ValueError) as ctx:
            RoadNetwork(nodes, edges)
        self.assertIn('disconnected', str(ctx.exception))

    def test_single_node(self):
        """A lone intersection is degenerate."""
        with self.assertRaises(ValueError):
            RoadNetwork([Intersection(0, 0, 0)], [])

    def test_non_contiguous_ids(self):
        """Ids must run 0..N-1."""
        nodes = [Intersection(0, 0, 0), Intersection(2, 300, 0)]
        with self.assertRaises(ValueError):
            RoadNetwork(nodes, [RoadSegment(0, 2, 300), RoadSegment(2, 0, 300)])

    def test_unknown_node_lookup(self):
        """check_node names the valid range."""
        with self.assertRaises(ValueError) as ctx:
            two_node_network().check_node(5)
        self.assertIn('0..1', str(ctx.exception))


class TestFileFormat(unittest.TestCase):
    """Tests parsing and writing network files."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_parse(self):
        """Comments are ignored and the header counts are honored."""
        text = ("# two nodes\nnodes 2 edges 2\nnode 0 0 0\nnode 1 300 0\n"
                "edge 0 1 300\nedge 1 0 300\n")
        net = parse_network(text)
        self.assertEqual(net.num_nodes, 2)
        self.assertEqual(len(net.edges), 2)

    def test_parse_error_has_line_number(self):
        """A malformed line is reported with its number."""
        text = "nodes 2 edges 2\nnode 0 0 0\nnode 1 x 0\nedge 0 1 300\nedge 1 0 300\n"
        with self.assertRaises(ValueError) as ctx:
            parse_network(text)
        self.assertIn('line 3', str(ctx.exception))

    def test_header_count_mismatch(self):
        """The header must match the number of node and edge lines."""
        text = "nodes 3 edges 2\nnode 0 0 0\nnode 1 300 0\nedge 0 1 300\nedge 1 0 300\n"
        with self.assertRaises(ValueError) as ctx:
            parse_network(text)
        self.assertIn('header', str(ctx.exception))

    def test_write_then_load(self):
        """A written grid loads back with the same nodes and edges."""
        net = generate_grid(3, 4, 250.0)
        path = os.path.join(self.tmp.name, 'grid.net')
        write_network(net, path)
        loaded = load_network(path)
        self.assertEqual(loaded.nodes, net.nodes)
        self.assertEqual(loaded.edges, net.edges)

    def test_missing_file(self):
        """Missing files raise FileNotFoundError."""
        with self.assertRaises(FileNotFoundError):
            load_network(os.path.join(self.tmp.name, 'nope.net'))


class TestWeights(unittest.TestCase):
    """Tests the Gaussian edge weights and the transition matrix."""

    def setUp(self):
        self.grid = generate_grid(4, 4, 300.0)

    def test_uniform_grid_sigma(self):
        """Equal road lengths fall back to the mean length."""
        self.assertEqual(default_sigma(self.grid), 300.0)

    def test_grid_weights(self):
        """Connected pairs weigh exp(-1), everything else 0."""
        weights = build_edge_weights(self.grid).values
        self.assertAlmostEqual(weights[0, 1], np.exp(-1.0))
        self.assertAlmostEqual(weights[1, 0], np.exp(-1.0))
        self.assertEqual(weights[0, 5], 0.0)
        self.assertTrue(np.all(np.diag(weights) == 0.0))
        np.testing.assert_allclose(weights, weights.T)

    def test_nonpositive_sigma(self):
        """sigma must be positive."""
        with self.assertRaises(ValueError):
            build_edge_weights(self.grid, sigma=0.0)

    def test_transition_rows(self):
        """Rows sum to one and spread evenly on a uniform grid."""
        trans = transition_matrix(build_edge_weights(self.grid)).values
        np.testing.assert_allclose(trans.sum(axis=1), np.ones(16))
        self.assertAlmostEqual(trans[0, 1], 0.5)
        self.assertAlmostEqual(trans[5, 1], 0.25)
        self.assertTrue(np.all(trans >= 0.0))

    def test_random_graphs_are_row_stochastic(self):
        """Transition matrices of random connected graphs and their powers keep row sums of one."""
        rng = np.random.default_rng(0)
        for _ in range(100):
            net = random_network(rng, int(rng.integers(2, 31)))
            trans = transition_matrix(build_edge_weights(net)).values
            np.testing.assert_allclose(trans.sum(axis=1), 1.0, atol=1e-9)
            power = np.eye(net.num_nodes)
            for _ in range(10):
                power = power @ trans
                np.testing.assert_allclose(power.sum(axis=1), 1.0, atol=1e-8)

    def test_nearly_uniform_lengths(self):
        """Blocks of 300, 300, 300 and 301 m keep a usable kernel and a stochastic matrix."""
        net = square_network((300.0, 300.0, 300.0, 301.0))
        self.assertAlmostEqual(default_sigma(net), 300.25)
        weights = build_edge_weights(net)
        for edge in net.edges:
            self.assertGreater(weights.values[edge.source, edge.target], 0.1)
        trans = transition_matrix(weights).values
        np.testing.assert_allclose(trans.sum(axis=1), np.ones(4))
        self.assertAlmostEqual(trans[0, 1], 0.5)

    def test_narrow_kernel_rows_do_not_vanish(self):
        """A kernel narrow enough to underflow every weight still gives row sums of one."""
        net = square_network((300.0, 300.0, 300.0, 301.0))
        weights = build_edge_weights(net, sigma=1.0)
        self.assertTrue(np.all(weights.values == 0.0))
        trans = transition_matrix(weights).values
        np.testing.assert_allclose(trans.sum(axis=1), np.ones(4))
        self.assertAlmostEqual(trans[0, 1], 0.5)
        self.assertAlmostEqual(trans[3, 1], 1.0)
        self.assertEqual(trans[0, 3], 0.0)

    def test_weights_decrease_with_length(self):
        """A longer road never weighs more than a shorter one."""
        net = random_network(np.random.default_rng(3), 12)
        weights = build_edge_weights(net, sigma=250.0).values
        pairs = sorted((e.length, weights[e.source, e.target]) for e in net.edges)
        for (_, w_short), (_, w_long) in zip(pairs, pairs[1:]):
            self.assertGreaterEqual(w_short, w_long)


class TestRouting(unittest.TestCase):
    """Tests shortest paths and hop distances."""

    def setUp(self):
        self.grid = generate_grid(4, 4, 300.0)

    def test_corner_to_corner(self):
        """0 -> 15 takes six blocks and starts through the smaller neighbor."""
        path = shortest_path(self.grid, 0, 15)
        self.assertEqual(len(path), 7)
        self.assertEqual(path[0], 0)
        self.assertEqual(path[-1], 15)
        self.assertEqual(path[1], 1)
        self.assertEqual(route_length(self.grid, path), 1800.0)

    def test_lengths_match_dijkstra(self):
        """Every route is as short as networkx's Dijkstra."""
        graph = self.grid.to_graph()
        for origin in range(16):
            for dest in range(16):
                if origin == dest:
                    continue
                path = shortest_path(self.grid, origin, dest)
                expected = nx.dijkstra_path_length(graph, origin, dest)
                self.assertAlmostEqual(route_length(self.grid, path), expected)

    def test_deterministic(self):
        """The same query always returns the same route."""
        self.assertEqual(shortest_path(self.grid, 3, 12), shortest_path(self.grid, 3, 12))

    def test_same_origin_and_destination(self):
        """origin == dest is rejected."""
        with self.assertRaises(ValueError):
            shortest_path(self.grid, 4, 4)

    def test_hop_distances(self):
        """Corner to far corner is six hops."""
        hops = hop_distances(self.grid, 0)
        self.assertEqual(hops[0], 0)
        self.assertEqual(hops[5], 2)
        self.assertEqual(hops[15], 6)
        self.assertEqual(len(hops), 16)


if __name__ == '__main__':
    unittest.main()
