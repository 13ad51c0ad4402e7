"""
Small dense Q-network written directly on numpy.

In this module:
- QNetwork: input P -> 20 -> 20 -> 8 with ReLU hidden layers and linear output.
- forward / backward: exact reverse-mode gradients, including the gradient
  with respect to the input (needed to train the diffusion filters).
- mse_loss and an RMSprop optimizer.

NOTE: - Weights are stored as (fan_out, fan_in) so a layer computes W @ x + b.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from signal_lab.config import HIDDEN_LAYERS, NUM_PHASES, LEARNING_RATE, RMSPROP_RHO, RMSPROP_EPSILON
from signal_lab.utils.math_utils import glorot_uniform, ensure_finite


#===============================================================================
#                               NETWORK
#===============================================================================
class QNetwork:
    """
    Fully connected network with ReLU hidden layers and a linear output.

    Args:
        layer_sizes (Sequence[int]): Input size, hidden sizes and output size.
        rng (Optional[np.random.Generator]): Used for Glorot-uniform weights;
            None leaves all parameters at zero.

    Raises:
        ValueError: If fewer than two sizes are given or a size is < 1.

    Example:
        >>> net = QNetwork([20, 20, 20, 8], np.random.default_rng(0))
        >>> net.forward(np.zeros(20)).shape
        (8,)
    """

    def __init__(self, layer_sizes: Sequence[int], rng: Optional[np.random.Generator] = None):
        sizes = [int(size) for size in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"Invalid layer sizes {sizes}. Need at least input and output, all >= 1.")
        self.layer_sizes = sizes
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            if rng is None:
                self.weights.append(np.zeros((fan_out, fan_in)))
            else:
                self.weights.append(glorot_uniform(rng, fan_in, fan_out))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def for_inputs(cls, input_size: int, rng: np.random.Generator) -> 'QNetwork':
        """The default Q-network: input -> 20 -> 20 -> 8."""
        return cls([input_size, *HIDDEN_LAYERS, NUM_PHASES], rng)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    def params(self) -> List[np.ndarray]:
        """Parameters in the order [W1, b1, W2, b2, ...] (live references)."""
        out = []
        for weight, bias in zip(self.weights, self.biases):
            out += [weight, bias]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[-1]

    def _forward(self, x: np.ndarray) -> List[np.ndarray]:
        """Activations of every layer, input first."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_size,):
            raise ValueError(f"Expected an input of length {self.input_size}, got shape {x.shape}.")
        ensure_finite(x, 'network input')
        activations = [x]
        last = len(self.weights) - 1
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            z = weight @ activations[-1] + bias
            activations.append(z if index == last else np.maximum(z, 0.0))
        return activations

    def to_dict(self) -> Dict[str, Any]:
        return {
            'layer_sizes': list(self.layer_sizes),
            'weights': [w.tolist() for w in self.weights],
            'biases': [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QNetwork':
        net = cls(data['layer_sizes'])
        net.weights = [np.array(w, dtype=float).reshape(out, inp) for w, inp, out
                       in zip(data['weights'], net.layer_sizes, net.layer_sizes[1:])]
        net.biases = [np.array(b, dtype=float) for b in data['biases']]
        for array in net.params():
            ensure_finite(array, 'checkpoint parameters')
        return net


def forward(net: QNetwork, x: np.ndarray) -> np.ndarray:
    """Q-values for one input vector."""
    return net.forward(x)


def backward(net: QNetwork, x: np.ndarray, grad_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss given dL/d(output).

    Args:
        net (QNetwork): The network.
        x (np.ndarray): The input the output was computed from.
        grad_out (np.ndarray): dL/d(output), one entry per output.

    Raises:
        ValueError: On a shape mismatch.

    Returns:
        Tuple[List[np.ndarray], np.ndarray]: Gradients in params() order and
        dL/dx.
    """
    grad = np.asarray(grad_out, dtype=float)
    if grad.shape != (net.layer_sizes[-1],):
        raise ValueError(
            f"Expected an output gradient of length {net.layer_sizes[-1]}, got shape {grad.shape}."
        )
    activations = net._forward(x)
    grads: List[np.ndarray] = []
    for index in range(len(net.weights) - 1, -1, -1):
        if index < len(net.weights) - 1:
            grad = grad * (activations[index + 1] > 0)
        grads[:0] = [np.outer(grad, activations[index]), grad.copy()]
        grad = net.weights[index].T @ grad
    return grads, grad


def mse_loss(pred: float, target: float) -> Tuple[float, float]:
    """
    Squared error and its derivative with respect to pred.

    Example:
        >>> mse_loss(1.0, 0.0)
        (1.0, 2.0)
    """
    diff = float(pred) - float(target)
    return diff * diff, 2.0 * diff


#===============================================================================
#                               OPTIMIZER
#===============================================================================
@dataclass
class RmspropState:
    """
    RMSprop hyper-parameters and one squared-gradient accumulator per
    parameter array (created lazily on the first step).
    """
    learning_rate: float = LEARNING_RATE
    rho: float = RMSPROP_RHO
    epsilon: float = RMSPROP_EPSILON
    accumulators: List[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'learning_rate': self.learning_rate,
            'rho': self.rho,
            'epsilon': self.epsilon,
            'accumulators': [a.tolist() for a in self.accumulators],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RmspropState':
        return cls(data['learning_rate'], data['rho'], data['epsilon'],
                   [np.array(a, dtype=float) for a in data['accumulators']])


def rmsprop_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                 state: RmspropState) -> None:
    """
    Updates params in place:

        acc   <- rho * acc + (1 - rho) * g^2
        param <- param - lr * g / (sqrt(acc) + eps)

    Raises:
        ValueError: If the gradients do not match the parameters.

    Example:
        A first step with g = 1, lr = 0.001 and rho = 0.9 gives acc = 0.1 and
        moves the parameter by about -0.003162.
    """
    if len(params) != len(grads):
        raise ValueError(f"Got {len(grads)} gradients for {len(params)} parameters.")
    if not state.accumulators:
        state.accumulators = [np.zeros_like(p, dtype=float) for p in params]
    if len(state.accumulators) != len(params):
        raise ValueError("Optimizer state does not match the parameters.")
    for param, grad, acc in zip(params, grads, state.accumulators):
        grad = np.asarray(grad, dtype=float)
        if grad.shape != param.shape or acc.shape != param.shape:
            raise ValueError(f"Gradient shape {grad.shape} does not match parameter {param.shape}.")
        acc[...] = state.rho * acc + (1.0 - state.rho) * grad * grad
        param -= state.learning_rate * grad / (np.sqrt(acc) + state.epsilon)
