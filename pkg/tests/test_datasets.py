"""
Tests for synthetic scenarios: lattice networks, steady flows, the hour split
and the choice of malfunctioning intersections.
"""

import unittest

from signal_lab.core.network import shortest_path
from signal_lab.core.simulator import FlowRecord
from signal_lab.experiment.datasets import (
    FlowSpec, generate_flow, generate_grid, od_candidates, select_malfunction_nodes, split_flow,
)


class TestGenerateGrid(unittest.TestCase):
    """Tests lattice networks."""

    def test_four_by_four(self):
        """The 4x4 grid has 16 intersections and 48 directed segments."""
        net = generate_grid(4, 4, 300.0)
        self.assertEqual(net.num_nodes, 16)
        self.assertEqual(len(net.edges), 48)

    def test_two_by_two(self):
        """The smallest grid is a ring of four."""
        net = generate_grid(2, 2, 100.0)
        self.assertEqual(net.num_nodes, 4)
        self.assertEqual(len(net.edges), 8)

    def test_node_zero_is_upper_left(self):
        """Node 0 sits top-left and node 1 to its east."""
        net = generate_grid(3, 3, 300.0)
        self.assertEqual((net.nodes[0].x, net.nodes[0].y), (0.0, 600.0))
        self.assertEqual((net.nodes[1].x, net.nodes[1].y), (300.0, 600.0))
        self.assertEqual((net.nodes[3].x, net.nodes[3].y), (0.0, 300.0))

    def test_corner_to_corner_distance(self):
        """Opposite corners of a 4x4 grid are six blocks apart."""
        net = generate_grid(4, 4, 300.0)
        path = shortest_path(net, 0, 15)
        self.assertAlmostEqual(sum(net.edge_length(a, b) for a, b in zip(path, path[1:])), 1800.0)

    def test_single_row_rejected(self):
        """A single row is not a grid."""
        with self.assertRaises(ValueError):
            generate_grid(1, 4, 300.0)

    def test_block_length_must_be_positive(self):
        """Zero block length is rejected."""
        with self.assertRaises(ValueError):
            generate_grid(3, 3, 0.0)


class TestGenerateFlow(unittest.TestCase):
    """Tests steady random-OD flows."""

    def setUp(self):
        self.net = generate_grid(4, 4, 300.0)

    def test_default_count(self):
        """1200 vehicles per 300 s over two hours is 28800 vehicles."""
        self.assertEqual(FlowSpec().count, 28800)

    def test_zero_duration(self):
        """No duration, no vehicles."""
        self.assertEqual(generate_flow(self.net, FlowSpec(duration_s=0.0)), [])

    def test_even_spacing(self):
        """60 vehicles in 300 s depart every 5 s."""
        flow = generate_flow(self.net, FlowSpec(rate=60.0, duration_s=300.0))
        self.assertEqual(len(flow), 60)
        self.assertEqual([r.depart for r in flow[:3]], [0.0, 5.0, 10.0])

    def test_origin_differs_from_destination(self):
        """No vehicle starts where it ends."""
        flow = generate_flow(self.net, FlowSpec(rate=600.0, duration_s=600.0, seed=4))
        self.assertTrue(all(r.origin != r.dest for r in flow))

    def test_deterministic(self):
        """The same seed draws the same flow; another seed a different one."""
        spec = FlowSpec(rate=300.0, duration_s=600.0, seed=11)
        self.assertEqual(generate_flow(self.net, spec), generate_flow(self.net, spec))
        other = FlowSpec(rate=300.0, duration_s=600.0, seed=12)
        self.assertNotEqual(generate_flow(self.net, spec), generate_flow(self.net, other))

    def test_boundary_policy(self):
        """Boundary flows never use the four inner intersections."""
        self.assertEqual(len(od_candidates(self.net, 'boundary')), 12)
        flow = generate_flow(self.net, FlowSpec(rate=300.0, duration_s=600.0, od_policy='boundary'))
        inner = {5, 6, 9, 10}
        self.assertFalse(any(r.origin in inner or r.dest in inner for r in flow))

    def test_invalid_flow_settings(self):
        """Non-positive rates and unknown policies are rejected."""
        with self.assertRaises(ValueError):
            FlowSpec(rate=0.0)
        with self.assertRaises(ValueError):
            FlowSpec(duration_s=-1.0)
        with self.assertRaises(ValueError):
            FlowSpec(od_policy='center')


class TestSplitFlow(unittest.TestCase):
    """Tests the training/test hour split."""

    def test_test_hour_rebased(self):
        """Second-hour departures start again at 0."""
        flow = [FlowRecord(0, 1, 0.0), FlowRecord(1, 2, 3599.0),
                FlowRecord(2, 3, 3600.0), FlowRecord(3, 0, 4000.0), FlowRecord(0, 2, 7200.0)]
        train, test = split_flow(flow)
        self.assertEqual([r.depart for r in train], [0.0, 3599.0])
        self.assertEqual(test, [FlowRecord(2, 3, 0.0), FlowRecord(3, 0, 400.0)])

    def test_empty(self):
        """An empty flow splits into two empty hours."""
        self.assertEqual(split_flow([]), ([], []))


class TestSelectMalfunctionNodes(unittest.TestCase):
    """Tests the choice of central intersections."""

    def setUp(self):
        self.net = generate_grid(4, 4, 300.0)

    def test_most_central(self):
        """The first inner node wins the tie on a 4x4 grid."""
        self.assertEqual(select_malfunction_nodes(self.net, 1), (5,))

    def test_inner_square(self):
        """Four central nodes are the inner square."""
        self.assertEqual(select_malfunction_nodes(self.net, 4), (5, 6, 9, 10))

    def test_none(self):
        """Zero malfunctions select nothing."""
        self.assertEqual(select_malfunction_nodes(self.net, 0), ())

    def test_too_many(self):
        """More malfunctions than intersections is an error."""
        with self.assertRaises(ValueError):
            select_malfunction_nodes(self.net, 17)

    def test_three_by_three_center(self):
        """The centre of a 3x3 grid is node 4."""
        self.assertEqual(select_malfunction_nodes(generate_grid(3, 3, 300.0), 1), (4,))


if __name__ == '__main__':
    unittest.main()
