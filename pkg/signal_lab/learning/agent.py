"""
Deep-Q agents for every intersection, with influence-aware aggregation.

In this module:
- State encoding (phase one-hot and capacity-normalized lane counts).
- Transition, ReplayBuffer, select_action, bellman_target.
- DiffusionAgent: shared (or per-intersection) Q-networks plus the diffusion
  filters, covering the coordinated controller, its ablations and the
  independent-agent baseline.
- JSON checkpoints and the greedy LearnedController used for evaluation.
"""

import json
import logging
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, Iterator, List, Optional, Sequence

import numpy as np

from signal_lab.config import TrainConfig, MALFUNCTION_OFF, NUM_PHASES, feature_size
from signal_lab.control.controllers import SignalController
from signal_lab.core.diffusion import (
    DiffusionFilters, DiffusionOperator, MalfunctionMask, aggregate_reward, conv_backward,
    final_reward,
)
from signal_lab.core.network import RoadNetwork, build_edge_weights, transition_matrix
from signal_lab.core.simulator import IntersectionObservation
from signal_lab.learning.neural import QNetwork, RmspropState, backward, mse_loss, rmsprop_step
from signal_lab.utils.io_utils import write_text_atomic
from signal_lab.utils.math_utils import first_argmax

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


#===============================================================================
#                               STATE ENCODING
#===============================================================================
def build_state(observations: Sequence[IntersectionObservation], capacities: np.ndarray,
                features: str = 'full') -> np.ndarray:
    """
    N×P state matrix S.

    'full' rows are an 8-dim phase one-hot (all zero while blacked out)
    followed by the 12 incoming lane counts divided by lane capacity;
    'lanes-only' rows keep just the 12 lane counts.
    """
    feature_size(features)
    capacities = np.asarray(capacities, dtype=float)
    counts = np.array([obs.incoming for obs in observations], dtype=float)
    lanes = np.divide(counts, capacities, out=np.zeros_like(counts), where=capacities > 0)
    if features == 'lanes-only':
        return lanes
    phases = np.zeros((len(observations), NUM_PHASES))
    for node, obs in enumerate(observations):
        if obs.phase != MALFUNCTION_OFF:
            phases[node, obs.phase] = 1.0
    return np.hstack([phases, lanes])


@dataclass(frozen=True)
class EncodedState:
    """
    Attributes:
        local: S, the N×P local features.
        bases: (N, K, P) rows of (T^k ⊙ Mask) S, or None without aggregation.
        aggregated: S'' = S + sum_k theta_k bases[:, k].
    """
    local: np.ndarray
    bases: Optional[np.ndarray]
    aggregated: np.ndarray


#===============================================================================
#                               REPLAY
#===============================================================================
@dataclass(frozen=True)
class Transition:
    """
    One agent's experience for one decision interval. `state` and
    `next_state` are rows of S''; `local` / `basis` keep the pieces needed
    to recompute them with the current filters, and `states` is the full
    local matrix S the filter gradient is taken through.
    """
    agent: int
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    local: np.ndarray
    basis: Optional[np.ndarray]
    next_local: np.ndarray
    next_basis: Optional[np.ndarray]
    states: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 <= self.action < NUM_PHASES:
            raise ValueError(f"Invalid action {self.action} in transition. Must be 0..{NUM_PHASES - 1}.")
        if not np.isfinite(self.reward):
            raise ValueError(f"Non-finite reward {self.reward} in transition.")


class ReplayBuffer:
    """FIFO ring of transitions; the oldest is evicted when full."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"Invalid replay capacity '{capacity}'. Must be >= 1.")
        self.capacity = capacity
        self._items: Deque[Transition] = deque(maxlen=capacity)
        self.inserted = 0

    def push(self, transition: Transition) -> None:
        self._items.append(transition)
        self.inserted += 1

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self._items)

    def snapshot(self) -> List[Transition]:
        return list(self._items)


#===============================================================================
#                               POLICY
#===============================================================================
def select_action(net: QNetwork, state: np.ndarray, epsilon: float, malfunctioning: bool,
                  rng: np.random.Generator) -> int:
    """
    Epsilon-greedy action.

    Malfunctioning intersections always get MALFUNCTION_OFF without drawing
    from rng. Otherwise one uniform draw decides between a random phase and
    the greedy one (lowest index on ties).
    """
    if malfunctioning:
        return MALFUNCTION_OFF
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(NUM_PHASES))
    return first_argmax(net.forward(state))


def bellman_target(reward: float, next_state: np.ndarray, terminal: bool,
                   net: QNetwork, gamma: float) -> float:
    """
    r if terminal, else r + gamma * max_a Q(next_state, a).

    Example:
        r = -2, gamma = 0.95 and a best next Q-value of 10 give 7.5.
    """
    if terminal or gamma == 0:
        return float(reward)
    return float(reward) + gamma * float(np.max(net.forward(next_state)))


#===============================================================================
#                               AGENT
#===============================================================================
class DiffusionAgent:
    """
    Q-learning agents of all intersections.

    With `config.aggregate` the state and reward of every agent are enriched
    with diffused information from malfunctioning intersections; without it
    each agent only sees its own intersection. Ablations: 'S' freezes the
    filters at ones, 'R' skips reward aggregation, 'M' aggregates from every
    intersection.

    Args:
        net (RoadNetwork): The road graph (for the transition matrix).
        config (TrainConfig): Training settings.
        capacities (np.ndarray): N×12 incoming lane capacities.
        mask (Optional[MalfunctionMask]): Malfunctioning intersections.
    """

    def __init__(self, net: RoadNetwork, config: TrainConfig, capacities: np.ndarray,
                 mask: Optional[MalfunctionMask] = None):
        self.config = config
        self.num_nodes = net.num_nodes
        self.capacities = np.asarray(capacities, dtype=float)
        self.rng = np.random.default_rng(config.seed)
        size = feature_size(config.features)
        count = 1 if config.shared else self.num_nodes
        self.networks = [QNetwork.for_inputs(size, self.rng) for _ in range(count)]
        self.optimizers = [RmspropState(config.learning_rate) for _ in range(count)]
        if config.ablation == 'S':
            self.filters = DiffusionFilters.fixed_ones(config.diffusion_steps)
        else:
            self.filters = DiffusionFilters.initial(config.diffusion_steps)
        self.filter_optimizer = RmspropState(config.learning_rate)
        transition = transition_matrix(build_edge_weights(net, config.sigma))
        self._operator = DiffusionOperator(
            transition, MalfunctionMask(np.zeros(self.num_nodes)), config.diffusion_steps)
        self.episode = 0
        self.curve: List[Dict[str, Any]] = []
        self.set_mask(mask if mask is not None else MalfunctionMask(np.zeros(self.num_nodes)))

    def set_mask(self, mask: MalfunctionMask) -> None:
        """Sets the malfunctioning intersections (and the aggregation sources)."""
        self.mask = mask
        self._malfunctioning = frozenset(mask.nodes)
        sources = MalfunctionMask.ones(self.num_nodes) if self.config.ablation == 'M' else mask
        self.operator = self._operator.with_mask(sources)

    @property
    def aggregates_state(self) -> bool:
        return self.config.aggregate

    @property
    def aggregates_reward(self) -> bool:
        return self.config.aggregate and self.config.ablation != 'R'

    def network_for(self, node: int) -> QNetwork:
        return self.networks[0 if self.config.shared else node]

    def encode(self, observations: Sequence[IntersectionObservation]) -> EncodedState:
        local = build_state(observations, self.capacities, self.config.features)
        if not self.aggregates_state:
            return EncodedState(local, None, local)
        bases = np.einsum('kij,jp->ikp', self.operator.masked_powers, local)
        aggregated = local + np.einsum('k,ikp->ip', self.filters.theta, bases)
        return EncodedState(local, bases, aggregated)

    def act(self, encoded: EncodedState, epsilon: float) -> Dict[int, int]:
        return {node: select_action(self.network_for(node), encoded.aggregated[node], epsilon,
                                    node in self._malfunctioning, self.rng)
                for node in range(self.num_nodes)}

    def shape_rewards(self, rewards: np.ndarray) -> np.ndarray:
        """R'' (or the local rewards when reward aggregation is off)."""
        rewards = np.asarray(rewards, dtype=float)
        if not self.aggregates_reward:
            return rewards
        return final_reward(rewards, aggregate_reward(rewards, self.operator))

    def transitions(self, encoded: EncodedState, actions: Dict[int, int], rewards: np.ndarray,
                    next_encoded: EncodedState, terminal: bool) -> List[Transition]:
        """One transition per functioning intersection, in node order."""
        out = []
        for node in range(self.num_nodes):
            if node in self._malfunctioning:
                continue
            out.append(Transition(
                agent=node,
                state=encoded.aggregated[node],
                action=int(actions[node]),
                reward=float(rewards[node]),
                next_state=next_encoded.aggregated[node],
                terminal=terminal,
                local=encoded.local[node],
                basis=None if encoded.bases is None else encoded.bases[node],
                next_local=next_encoded.local[node],
                next_basis=None if next_encoded.bases is None else next_encoded.bases[node],
                states=None if encoded.bases is None else encoded.local,
            ))
        return out

    def _input(self, local: np.ndarray, basis: Optional[np.ndarray]) -> np.ndarray:
        if basis is None:
            return local
        return local + self.filters.theta @ basis

    def update(self, transition: Transition) -> float:
        """
        One RMSprop step on the squared TD error of a single transition,
        backpropagated into the network and (when trainable) the filters.

        Returns:
            float: The loss before the step.
        """
        net = self.network_for(transition.agent)
        x = self._input(transition.local, transition.basis)
        next_x = self._input(transition.next_local, transition.next_basis)
        target = bellman_target(transition.reward, next_x, transition.terminal, net, self.config.gamma)
        q_values = net.forward(x)
        loss, grad = mse_loss(q_values[transition.action], target)
        grad_out = np.zeros(NUM_PHASES)
        grad_out[transition.action] = grad
        grads, grad_x = backward(net, x, grad_out)
        rmsprop_step(net.params(), grads, self.optimizers[0 if self.config.shared else transition.agent])
        if transition.states is not None and self.filters.trainable:
            rmsprop_step([self.filters.theta], [self.filter_gradient(transition, grad_x)],
                         self.filter_optimizer)
        return loss

    def filter_gradient(self, transition: Transition, grad_x: np.ndarray) -> np.ndarray:
        """
        dL/dtheta for one agent's input gradient.

        Only the agent's own row of S'' feeds the loss, so the upstream
        gradient is zero everywhere else.

        Args:
            transition (Transition): A transition stored with its full S.
            grad_x (np.ndarray): dL/d(S'' row of transition.agent).

        Returns:
            np.ndarray: The K-vector over the filters.
        """
        upstream = np.zeros_like(transition.states)
        upstream[transition.agent] = grad_x
        grad_theta, _ = conv_backward(upstream, transition.states, self.operator, self.filters)
        return grad_theta

    def learn(self, buffer: ReplayBuffer, passes: int) -> float:
        """Full passes over the buffer in a fresh shuffled order each; mean loss."""
        samples = buffer.snapshot()
        losses = []
        for _ in range(passes):
            for index in self.rng.permutation(len(samples)):
                losses.append(self.update(samples[index]))
        return float(np.mean(losses)) if losses else 0.0

    #===========================================================================
    #                           CHECKPOINTS
    #===========================================================================
    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': CHECKPOINT_VERSION,
            'features': self.config.features,
            'shared': self.config.shared,
            'aggregate': self.config.aggregate,
            'ablation': self.config.ablation,
            'diffusion_steps': self.config.diffusion_steps,
            'networks': [net.to_dict() for net in self.networks],
            'optimizers': [opt.to_dict() for opt in self.optimizers],
            'theta': self.filters.theta.tolist(),
            'theta_trainable': self.filters.trainable,
            'theta_optimizer': self.filter_optimizer.to_dict(),
            'rng_state': self.rng.bit_generator.state,
            'episode': self.episode,
            'curve': self.curve,
        }

    def load_dict(self, data: Dict[str, Any]) -> None:
        """
        Restores parameters, optimizer state, RNG and progress.

        Raises:
            ValueError: On an unknown version or a checkpoint written for
                another model shape or mode.
        """
        if data.get('version') != CHECKPOINT_VERSION:
            raise ValueError(
                f"Unsupported checkpoint version {data.get('version')!r}. "
                f"Expected {CHECKPOINT_VERSION}."
            )
        for key in ('features', 'shared', 'aggregate', 'ablation', 'diffusion_steps'):
            if data[key] != getattr(self.config, key):
                raise ValueError(
                    f"Checkpoint was trained with {key}={data[key]!r}, "
                    f"but the configuration has {key}={getattr(self.config, key)!r}."
                )
        networks = [QNetwork.from_dict(item) for item in data['networks']]
        if len(networks) != len(self.networks) or any(
                n.layer_sizes != m.layer_sizes for n, m in zip(networks, self.networks)):
            raise ValueError("Checkpoint networks do not match the configured model.")
        self.networks = networks
        self.optimizers = [RmspropState.from_dict(item) for item in data['optimizers']]
        self.filters = DiffusionFilters(np.array(data['theta'], dtype=float), data['theta_trainable'])
        self.filter_optimizer = RmspropState.from_dict(data['theta_optimizer'])
        self.rng.bit_generator.state = data['rng_state']
        self.episode = int(data['episode'])
        self.curve = list(data['curve'])


def checkpoint_text(agent: DiffusionAgent) -> str:
    return json.dumps(agent.to_dict(), sort_keys=True, indent=1) + '\n'


def save_checkpoint(path: str, agent: DiffusionAgent) -> None:
    """Writes the agent as versioned JSON (atomically)."""
    write_text_atomic(path, checkpoint_text(agent))
    logger.debug("checkpoint written to %s (episode %d)", path, agent.episode)


def load_checkpoint(path: str, agent: DiffusionAgent) -> DiffusionAgent:
    """Loads a checkpoint into an agent built with the same configuration."""
    with open(path, 'r', encoding='utf-8') as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a valid checkpoint: {exc}") from exc
    agent.load_dict(data)
    return agent


class LearnedController(SignalController):
    """Greedy (epsilon = 0) policy of a trained agent."""

    def __init__(self, agent: DiffusionAgent):
        self.agent = agent

    def decide(self, clock, observations):
        return self.agent.act(self.agent.encode(observations), 0.0)
