"""
Tests for the training driver: episodes, determinism, checkpoints and resume.
"""

import os
import tempfile
import unittest

import numpy as np

from signal_lab.config import SimConfig, TrainConfig
from signal_lab.core.diffusion import MalfunctionMask
from signal_lab.experiment.datasets import FlowSpec, generate_flow, generate_grid
from signal_lab.learning.agent import DiffusionAgent, ReplayBuffer, load_checkpoint
from signal_lab.learning.training import train, train_episode, CURVE_COLUMNS
from signal_lab.utils.io_utils import read_csv_rows


class TestTraining(unittest.TestCase):
    """Short training runs on a 3x3 grid."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.net = generate_grid(3, 3, 300.0)
        self.flow = generate_flow(self.net, FlowSpec(rate=300.0, duration_s=200.0, seed=0))
        self.mask = MalfunctionMask.from_nodes(9, [4])
        self.sim = SimConfig(foe_ignore_prob=0.05, seed=1)
        self.config = TrainConfig(episodes=2, updates_per_episode=1, episode_s=200.0,
                                  diffusion_steps=3, epsilon_decay_episodes=2, seed=3)

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name: str) -> str:
        return os.path.join(self.tmp.name, name)

    def test_zero_episodes_writes_initial_checkpoint(self):
        """No episodes still leaves a loadable checkpoint and an empty curve."""
        config = TrainConfig(episodes=0, diffusion_steps=3)
        result = train(config, self.net, self.flow, self.mask, self.sim,
                       checkpoint_path=self.path('ckpt.json'), progress=False)
        self.assertEqual(result.curve, [])
        self.assertTrue(os.path.exists(self.path('ckpt.json')))
        agent = DiffusionAgent(self.net, config, result.agent.capacities)
        load_checkpoint(self.path('ckpt.json'), agent)
        self.assertEqual(agent.episode, 0)

    def test_same_seed_same_curve(self):
        """Two runs with identical seeds produce identical learning curves."""
        first = train(self.config, self.net, self.flow, self.mask, self.sim, progress=False)
        second = train(self.config, self.net, self.flow, self.mask, self.sim, progress=False)
        self.assertEqual(first.curve, second.curve)
        self.assertEqual(len(first.curve), 2)
        self.assertEqual(first.curve[0].epsilon, 1.0)
        self.assertGreater(first.curve[0].transitions, 0)

    def test_empty_flow(self):
        """Without vehicles every reward is zero and nothing finishes."""
        result = train(self.config, self.net, [], self.mask, self.sim, progress=False)
        for stats in result.curve:
            self.assertEqual(stats.mean_reward, 0.0)
            self.assertEqual(stats.throughput, 0)

    def test_curve_csv(self):
        """The learning curve is written with one row per episode."""
        train(self.config, self.net, self.flow, self.mask, self.sim,
              curve_path=self.path('curve.csv'), progress=False)
        rows = read_csv_rows(self.path('curve.csv'))
        self.assertEqual(len(rows), 2)
        self.assertEqual(tuple(rows[0]), CURVE_COLUMNS)
        self.assertEqual(rows[1]['episode'], '1')

    def test_resume(self):
        """A resumed run keeps the finished episodes and trains the rest."""
        ckpt = self.path('ckpt.json')
        one = TrainConfig(episodes=1, updates_per_episode=1, episode_s=200.0,
                          diffusion_steps=3, epsilon_decay_episodes=2, seed=3)
        partial = train(one, self.net, self.flow, self.mask, self.sim,
                        checkpoint_path=ckpt, progress=False)
        resumed = train(self.config, self.net, self.flow, self.mask, self.sim,
                        checkpoint_path=ckpt, resume=True, progress=False)
        self.assertEqual(len(resumed.curve), 2)
        self.assertEqual(resumed.curve[0], partial.curve[0])
        self.assertEqual(resumed.curve[1].episode, 1)
        self.assertEqual(resumed.agent.episode, 2)

    def test_episode_failure_is_wrapped(self):
        """Errors inside an episode name the episode."""
        agent = DiffusionAgent(self.net, self.config, np.full((9, 12), 40.0))

        def broken_factory(episode):
            raise ValueError("no simulator")

        with self.assertRaises(RuntimeError) as ctx:
            train_episode(broken_factory, agent, self.config, self.mask, ReplayBuffer(10), 4)
        self.assertIn('episode 4', str(ctx.exception))


if __name__ == '__main__':
    unittest.main()
