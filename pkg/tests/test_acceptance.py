"""
Full-size scenarios on the default 4x4 grid.

These runs take minutes to hours; they only execute with SIGNAL_LAB_LONG=1.
"""

import os
import tempfile
import unittest
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from signal_lab.config import ExperimentSettings, SimConfig, TrainConfig
from signal_lab.control.controllers import MaxPressureController
from signal_lab.core.simulator import TrafficSimulator
from signal_lab.experiment.datasets import FlowSpec, generate_flow, generate_grid, split_flow
from signal_lab.experiment.harness import ExperimentRunner, _run_job, evaluate
from signal_lab.utils.time_utils import decision_steps

LONG = os.environ.get('SIGNAL_LAB_LONG') == '1'

SEEDS = (0, 1, 2, 3, 4)
EPISODES = 50


@unittest.skipUnless(LONG, 'set SIGNAL_LAB_LONG=1 to run full-size scenarios')
class TestDefaultScenario(unittest.TestCase):
    """The default grid, flow and malfunction."""

    def test_maxpressure_loses_throughput(self):
        """Blacking out the centre costs max pressure some throughput."""
        result = ExperimentRunner(ExperimentSettings(controller='maxpressure'), progress=False).run(0)
        self.assertEqual(result.malfunction, (5,))
        self.assertIsNotNone(result.intersection_rr)
        self.assertGreater(result.no_malfunction.intersection_throughput, 0.0)
        self.assertLessEqual(result.malfunction_metrics.intersection_throughput,
                             result.no_malfunction.intersection_throughput)

    def test_conservation_through_test_hour(self):
        """Every generated vehicle is accounted for after a malfunctioning hour."""
        net = generate_grid(4, 4, 300.0)
        _, test_flow = split_flow(generate_flow(net, FlowSpec(seed=0)))
        settings = ExperimentSettings()
        sim = evaluate(net, test_flow, MaxPressureController(), (5, 6), settings.sim)
        self.assertTrue(sim.check_conservation())
        self.assertGreater(sim.finished, 0)

    def test_conservation_every_tick_for_two_hours(self):
        """Vehicles are conserved after every tick of the full two-hour dataset."""
        net = generate_grid(4, 4, 300.0)
        config = SimConfig(seed=0)
        sim = TrafficSimulator(net, generate_flow(net, FlowSpec(seed=0)), config)
        sim.inject_malfunction((5,))
        controller = MaxPressureController()
        violations = []

        def check(current: TrafficSimulator) -> None:
            if not current.check_conservation():
                violations.append(current.clock)

        observations = sim.observe()
        for _ in range(decision_steps(7200.0, config.decision_interval_s)):
            observations = sim.step(controller.decide(sim.clock, observations), on_tick=check).observations
        self.assertEqual(violations, [])
        self.assertEqual(sim.clock, 7200.0)
        self.assertGreater(sim.finished, 0)

    def test_identical_seeds_write_identical_metrics(self):
        """Two runs with the same seed write byte-identical metrics files."""
        contents = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as out:
                ExperimentRunner(ExperimentSettings(controller='maxpressure'), out,
                                 progress=False).run_all()
                with open(os.path.join(out, 'metrics.csv'), 'rb') as handle:
                    contents.append(handle.read())
        self.assertEqual(contents[0], contents[1])

    def test_short_coordinated_training(self):
        """A few coordinated episodes produce a defined reduction ratio."""
        train = TrainConfig(episodes=3, updates_per_episode=5)
        settings = ExperimentSettings(controller='mallight', train=train)
        result = ExperimentRunner(settings, progress=False).run(0)
        self.assertIsNotNone(result.intersection_rr)


@unittest.skipUnless(LONG, 'set SIGNAL_LAB_LONG=1 to run full-size scenarios')
class TestMethodOrdering(unittest.TestCase):
    """
    Reduction ratios of the coordinated controller against the baselines and
    its reward ablation: five seeds, fifty training episodes, one central
    malfunction.
    """

    @classmethod
    def setUpClass(cls):
        base = ExperimentSettings(train=TrainConfig(episodes=EPISODES))
        methods = {
            'mallight': replace(base, controller='mallight'),
            'mallight-R': replace(base, controller='mallight',
                                  train=replace(base.train, ablation='R')),
            'idqn': replace(base, controller='idqn'),
            'fixedtime': replace(base, controller='fixedtime'),
        }
        jobs = [(settings, name, seed, None) for name, settings in methods.items() for seed in SEEDS]
        with ProcessPoolExecutor(max_workers=os.cpu_count() or 1) as pool:
            outcomes = list(pool.map(_run_job, jobs))
        cls.errors = [error for _, _, _, error in outcomes if error]
        cls.rr = {(name, seed): result.intersection_rr if result else None
                  for name, seed, result, _ in outcomes}

    def wins(self, method: str, other: str, strict: bool = True) -> int:
        count = 0
        for seed in SEEDS:
            ours, theirs = self.rr[(method, seed)], self.rr[(other, seed)]
            if ours is None or theirs is None:
                continue
            if ours < theirs or (not strict and ours == theirs):
                count += 1
        return count

    def test_all_runs_finish(self):
        """Every method and seed finishes with a defined reduction ratio."""
        self.assertEqual(self.errors, [])
        self.assertTrue(all(value is not None for value in self.rr.values()))

    def test_coordinated_beats_independent_agents(self):
        """The coordinated controller loses less than independent agents in at least 4 of 5 seeds."""
        self.assertGreaterEqual(self.wins('mallight', 'idqn'), 4)

    def test_coordinated_beats_fixed_time(self):
        """The coordinated controller loses less than fixed-time plans in at least 4 of 5 seeds."""
        self.assertGreaterEqual(self.wins('mallight', 'fixedtime'), 4)

    def test_reward_sharing_helps(self):
        """Without reward aggregation the loss is at least as large in 4 of 5 seeds."""
        self.assertGreaterEqual(self.wins('mallight', 'mallight-R', strict=False), 4)


if __name__ == '__main__':
    unittest.main()
