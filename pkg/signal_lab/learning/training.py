"""
Episode loop and training driver.

An episode replays one simulated hour of the training flow with the agents
in control, stores one transition per functioning intersection and decision,
then makes `updates_per_episode` full passes over the replay buffer.
"""

import logging
import os
from dataclasses import dataclass, asdict, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from signal_lab.config import SimConfig, TrainConfig
from signal_lab.core.diffusion import MalfunctionMask
from signal_lab.core.network import RoadNetwork
from signal_lab.core.simulator import FlowRecord, TrafficSimulator, incoming_lane_capacities
from signal_lab.learning.agent import DiffusionAgent, ReplayBuffer, load_checkpoint, save_checkpoint
from signal_lab.utils.io_utils import write_csv_atomic
from signal_lab.utils.time_utils import decision_steps

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ('episode', 'mean_reward', 'throughput', 'epsilon', 'loss')


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    mean_reward: float
    throughput: int
    epsilon: float
    loss: float
    transitions: int


@dataclass
class TrainResult:
    agent: DiffusionAgent
    curve: List[EpisodeStats]


def train_episode(env_factory: Callable[[int], TrafficSimulator], agent: DiffusionAgent,
                  config: TrainConfig, mask: MalfunctionMask, buffer: ReplayBuffer,
                  episode: int) -> EpisodeStats:
    """
    Runs one training episode and the replay updates that follow it.

    Args:
        env_factory (Callable[[int], TrafficSimulator]): Builds a fresh
            simulator for an episode number.
        agent (DiffusionAgent): The learning agents.
        config (TrainConfig): Schedule (epsilon, gamma, passes, episode length).
        mask (MalfunctionMask): Malfunctioning intersections during training.
        buffer (ReplayBuffer): Replay memory, kept across episodes.
        episode (int): Episode number (drives epsilon).

    Raises:
        RuntimeError: If anything inside the episode fails; the cause is
            chained.

    Returns:
        EpisodeStats: Mean local reward, completed trips, epsilon, mean loss
        and transitions stored.
    """
    try:
        sim = env_factory(episode)
        sim.inject_malfunction(mask.nodes)
        agent.set_mask(mask)
        epsilon = config.epsilon_for(episode)
        steps = decision_steps(config.episode_s, sim.config.decision_interval_s)
        encoded = agent.encode(sim.observe())
        reward_sum, stored = 0.0, 0
        for step in range(steps):
            actions = agent.act(encoded, epsilon)
            result = sim.step(actions)
            next_encoded = agent.encode(result.observations)
            shaped = agent.shape_rewards(result.rewards)
            for transition in agent.transitions(encoded, actions, shaped, next_encoded,
                                                terminal=step == steps - 1):
                buffer.push(transition)
                stored += 1
            reward_sum += float(np.mean(result.rewards))
            encoded = next_encoded
        loss = agent.learn(buffer, config.updates_per_episode)
    except Exception as exc:
        raise RuntimeError(f"episode {episode} failed: {exc}") from exc
    return EpisodeStats(
        episode=episode,
        mean_reward=reward_sum / steps if steps else 0.0,
        throughput=sim.finished,
        epsilon=epsilon,
        loss=loss,
        transitions=stored,
    )


def write_curve(path: str, curve: Sequence[EpisodeStats]) -> None:
    """Learning curve CSV: episode,mean_reward,throughput,epsilon,loss."""
    rows = [(s.episode, repr(s.mean_reward), s.throughput, repr(s.epsilon), repr(s.loss))
            for s in curve]
    write_csv_atomic(path, CURVE_COLUMNS, rows)


def train(config: TrainConfig, network: RoadNetwork, flow: Sequence[FlowRecord],
          mask: MalfunctionMask, sim_config: Optional[SimConfig] = None,
          checkpoint_path: Optional[str] = None, resume: bool = False,
          curve_path: Optional[str] = None, progress: bool = True) -> TrainResult:
    """
    Trains agents for config.episodes episodes on one flow.

    Episode k simulates with seed sim_config.seed + k. A resumed run continues
    from the stored episode with an empty replay buffer.

    Args:
        config (TrainConfig): Training settings.
        network (RoadNetwork): The road graph.
        flow (Sequence[FlowRecord]): Training flow (one hour).
        mask (MalfunctionMask): Malfunctioning intersections.
        sim_config (Optional[SimConfig]): Simulator settings.
        checkpoint_path (Optional[str]): Written after every episode.
        resume (bool): Load checkpoint_path first if it exists.
        curve_path (Optional[str]): Learning-curve CSV destination.
        progress (bool): Show a tqdm progress bar.

    Returns:
        TrainResult: The trained agent and the learning curve.

    Example:
        >>> result = train(TrainConfig(episodes=0), net, flow, mask, progress=False)
        >>> result.curve
        []
    """
    sim_config = sim_config if sim_config else SimConfig()
    capacities = incoming_lane_capacities(network, sim_config)
    agent = DiffusionAgent(network, config, capacities, mask)
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        load_checkpoint(checkpoint_path, agent)
        logger.info("resuming from %s at episode %d", checkpoint_path, agent.episode)
    buffer = ReplayBuffer(config.buffer_capacity)

    def env_factory(episode: int) -> TrafficSimulator:
        return TrafficSimulator(network, flow, replace(sim_config, seed=sim_config.seed + episode))

    curve = [EpisodeStats(**item) for item in agent.curve]
    episodes = range(agent.episode, config.episodes)
    for episode in tqdm(episodes, desc='training', unit='episode', disable=not progress):
        stats = train_episode(env_factory, agent, config, mask, buffer, episode)
        curve.append(stats)
        agent.episode = episode + 1
        agent.curve.append(asdict(stats))
        logger.info("episode %d: reward %.3f, throughput %d, epsilon %.3f, loss %.4f",
                    episode, stats.mean_reward, stats.throughput, stats.epsilon, stats.loss)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, agent)
    if checkpoint_path and not os.path.exists(checkpoint_path):
        save_checkpoint(checkpoint_path, agent)
    if curve_path:
        write_curve(curve_path, curve)
    return TrainResult(agent, curve)
