"""
Influence-aware aggregation over the road graph.

A random walk on the transition matrix T spreads information from the
malfunctioning intersections to their neighbors. Its K powers are combined
with a column mask (only malfunctioning intersections act as sources):

    S'  = [sum_k theta_k T^k ⊙ Mask] S          masked diffusion convolution
    S'' = S' + S                                state aggregation
    R'  = [sum_k T^k ⊙ Mask] R                  reward aggregation
    R'' = R + R'                                final reward

With an empty mask S'' == S and R'' == R exactly, so the same code path runs
the independent-agent pipeline.

In this module:
- MalfunctionMask, DiffusionOperator, DiffusionFilters
- stationary_distribution (restart-weighted influence, analysis only)
- masked_diffusion_conv, aggregate_state, aggregate_reward, final_reward
- conv_backward (analytic gradients over theta and S)
- influence matrix CSV export
"""

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from signal_lab.core.network import TransitionMatrix
from signal_lab.utils.io_utils import write_csv_atomic
from signal_lab.utils.math_utils import matrix_powers, ensure_finite


#===============================================================================
#                               TYPES
#===============================================================================
@dataclass(frozen=True)
class MalfunctionMask:
    """Binary N-vector; entry j is 1 iff intersection j malfunctions."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or not np.all((values == 0) | (values == 1)):
            raise ValueError("A malfunction mask must be a 1-D vector of zeros and ones.")
        object.__setattr__(self, 'values', values)

    @classmethod
    def from_nodes(cls, num_nodes: int, nodes: Iterable[int]) -> 'MalfunctionMask':
        """
        Example:
            >>> MalfunctionMask.from_nodes(4, [2]).values
            array([0., 0., 1., 0.])
        """
        values = np.zeros(num_nodes)
        for node in nodes:
            if not 0 <= node < num_nodes:
                raise ValueError(f"Invalid malfunctioning node {node}. Must be in 0..{num_nodes - 1}.")
            values[node] = 1.0
        return cls(values)

    @classmethod
    def ones(cls, num_nodes: int) -> 'MalfunctionMask':
        return cls(np.ones(num_nodes))

    @property
    def nodes(self) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.values))

    @property
    def is_empty(self) -> bool:
        return not np.any(self.values)


class DiffusionOperator:
    """
    The K transition-matrix powers T^1..T^K and their masked versions.

    Args:
        transition (TransitionMatrix): Row-stochastic T.
        mask (MalfunctionMask): Source intersections.
        steps (int): K.

    Raises:
        ValueError: If K < 1 or the mask length differs from N.
    """

    def __init__(self, transition: TransitionMatrix, mask: MalfunctionMask, steps: int):
        values = np.asarray(transition.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"Transition matrix must be square, got shape {values.shape}.")
        self.transition = transition
        self.steps = int(steps)
        self.powers = matrix_powers(values, self.steps)
        self._set_mask(mask)

    def _set_mask(self, mask: MalfunctionMask) -> None:
        if mask.values.shape[0] != self.num_nodes:
            raise ValueError(
                f"Mask length {mask.values.shape[0]} does not match {self.num_nodes} intersections."
            )
        self.mask = mask
        # Column mask: column j survives iff intersection j malfunctions.
        self.masked_powers = self.powers * mask.values[None, None, :]

    @property
    def num_nodes(self) -> int:
        return self.powers.shape[1]

    def with_mask(self, mask: MalfunctionMask) -> 'DiffusionOperator':
        """A new operator for another mask, reusing the cached powers."""
        clone = object.__new__(DiffusionOperator)
        clone.transition = self.transition
        clone.steps = self.steps
        clone.powers = self.powers
        clone._set_mask(mask)
        return clone

    def combined(self, theta: np.ndarray) -> np.ndarray:
        """A = sum_k theta_k * masked_powers[k]."""
        return np.tensordot(theta, self.masked_powers, axes=1)


@dataclass
class DiffusionFilters:
    """
    One trainable scalar per diffusion step, shared by every feature column.
    Defaults to 1/K each.
    """
    theta: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 1 or self.theta.size < 1:
            raise ValueError("Diffusion filters must be a non-empty 1-D vector.")
        ensure_finite(self.theta, 'diffusion filters')

    @classmethod
    def initial(cls, steps: int, trainable: bool = True) -> 'DiffusionFilters':
        return cls(np.full(steps, 1.0 / steps), trainable)

    @classmethod
    def fixed_ones(cls, steps: int) -> 'DiffusionFilters':
        """Untrained weights equal to the plain sum of powers."""
        return cls(np.ones(steps), trainable=False)


#===============================================================================
#                               OPERATIONS
#===============================================================================
def stationary_distribution(transition: TransitionMatrix, alpha: float, steps: int) -> np.ndarray:
    """
    Truncated restart-weighted random walk:

        P = sum_{k=1}^{K} alpha * (1 - alpha)^k * T^k

    Used for the influence analysis only.

    Args:
        transition (TransitionMatrix): Row-stochastic T.
        alpha (float): Restart probability in (0, 1).
        steps (int): K >= 1.

    Raises:
        ValueError: If alpha is outside (0, 1) or K < 1.

    Returns:
        np.ndarray: The N×N influence matrix. Its rows sum to
        sum_k alpha (1 - alpha)^k.

    Example:
        On a 2-node ring with alpha = 0.5 and K = 2 this is
        0.25 T + 0.125 T^2.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"Invalid alpha '{alpha}'. Must be in (0, 1).")
    powers = matrix_powers(np.asarray(transition.values, dtype=float), steps)
    weights = alpha * (1 - alpha) ** np.arange(1, steps + 1)
    return np.tensordot(weights, powers, axes=1)


def _check_state(state: np.ndarray, op: DiffusionOperator) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.ndim != 2 or state.shape[0] != op.num_nodes:
        raise ValueError(
            f"State matrix must have shape ({op.num_nodes}, P), got {state.shape}."
        )
    return state


def _check_theta(filters: DiffusionFilters, op: DiffusionOperator) -> None:
    if filters.theta.size != op.steps:
        raise ValueError(
            f"Expected {op.steps} diffusion filters, got {filters.theta.size}."
        )


def masked_diffusion_conv(state: np.ndarray, op: DiffusionOperator,
                          filters: DiffusionFilters) -> np.ndarray:
    """
    S' = A S with A = sum_k theta_k T^k ⊙ Mask.

    Args:
        state (np.ndarray): N×P state matrix S.
        op (DiffusionOperator): Powers and mask.
        filters (DiffusionFilters): theta, length K.

    Raises:
        ValueError: On a dimension mismatch.

    Returns:
        np.ndarray: The N×P aggregated neighbor information S'.
    """
    state = _check_state(state, op)
    _check_theta(filters, op)
    return op.combined(filters.theta) @ state


def aggregate_state(state_prime: np.ndarray, state: np.ndarray) -> np.ndarray:
    """S'' = S' + S."""
    state_prime = np.asarray(state_prime, dtype=float)
    state = np.asarray(state, dtype=float)
    if state_prime.shape != state.shape:
        raise ValueError(f"Shape mismatch: {state_prime.shape} vs {state.shape}.")
    return state_prime + state


def aggregate_reward(rewards: Sequence[float], op: DiffusionOperator) -> np.ndarray:
    """
    R' = [sum_k T^k ⊙ Mask] R, without trainable weights.

    Raises:
        ValueError: If R does not have one entry per intersection.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != (op.num_nodes,):
        raise ValueError(
            f"Reward vector must have length {op.num_nodes}, got shape {rewards.shape}."
        )
    return op.masked_powers.sum(axis=0) @ rewards


def final_reward(rewards: Sequence[float], rewards_prime: Sequence[float]) -> np.ndarray:
    """R'' = R + R'."""
    rewards = np.asarray(rewards, dtype=float)
    rewards_prime = np.asarray(rewards_prime, dtype=float)
    if rewards.shape != rewards_prime.shape:
        raise ValueError(f"Length mismatch: {rewards.shape} vs {rewards_prime.shape}.")
    return rewards + rewards_prime


def conv_backward(upstream: np.ndarray, state: np.ndarray, op: DiffusionOperator,
                  filters: DiffusionFilters):
    """
    Gradients of a loss L through S'' = A S + S.

        dL/dtheta_k = <G, (T^k ⊙ Mask) S>
        dL/dS       = sum_k theta_k (T^k ⊙ Mask)^T G + G

    Args:
        upstream (np.ndarray): G = dL/dS'', shape N×P.
        state (np.ndarray): S, shape N×P.
        op (DiffusionOperator): Powers and mask.
        filters (DiffusionFilters): Current theta.

    Raises:
        ValueError: On a shape mismatch.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (K-vector over theta, N×P over S).
    """
    state = _check_state(state, op)
    _check_theta(filters, op)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != state.shape:
        raise ValueError(f"Gradient shape {upstream.shape} does not match state {state.shape}.")
    propagated = op.masked_powers @ state            # (K, N, P)
    grad_theta = np.einsum('knp,np->k', propagated, upstream)
    grad_state = op.combined(filters.theta).T @ upstream + upstream
    return grad_theta, grad_state


#===============================================================================
#                               INFLUENCE EXPORT
#===============================================================================
@dataclass(frozen=True)
class InfluenceProfile:
    """Influence of one source on every intersection, grouped by hop distance."""
    source: int
    influence: np.ndarray
    hops: np.ndarray
    mean_by_hop: dict = field(default_factory=dict)


def influence_profile(matrix: np.ndarray, source: int, hops: Sequence[int]) -> InfluenceProfile:
    """
    Reads the influence of `source` on every node (column `source` of the
    matrix: how much each node draws from the source) and averages it by hop
    distance, excluding the source itself.
    """
    matrix = np.asarray(matrix, dtype=float)
    influence = matrix[:, source].copy()
    hops = np.asarray(hops, dtype=int)
    means = {}
    for hop in sorted(set(int(h) for h in hops) - {0}):
        means[hop] = float(np.mean(influence[hops == hop]))
    return InfluenceProfile(source, influence, hops, means)


def write_influence_csv(path: str, profile: InfluenceProfile) -> None:
    """Writes `node,hops,influence` rows for one source."""
    rows = [(node, int(profile.hops[node]), repr(float(value)))
            for node, value in enumerate(profile.influence)]
    write_csv_atomic(path, ('node', 'hops', 'influence'), rows)
