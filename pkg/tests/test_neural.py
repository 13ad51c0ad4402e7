"""
Tests for the Q-network, its gradients, the squared-error loss and RMSprop.
"""

import unittest

import numpy as np

from signal_lab.learning.neural import QNetwork, forward, backward, mse_loss, RmspropState, rmsprop_step
from signal_lab.utils.math_utils import relative_error


class TestForward(unittest.TestCase):
    """Tests network evaluation."""

    def test_zero_network(self):
        """All-zero parameters give all-zero Q-values."""
        net = QNetwork([20, 20, 20, 8])
        np.testing.assert_array_equal(forward(net, np.ones(20)), np.zeros(8))

    def test_default_shape(self):
        """The default network maps P inputs to 8 Q-values."""
        net = QNetwork.for_inputs(12, np.random.default_rng(0))
        self.assertEqual(net.layer_sizes, [12, 20, 20, 8])
        self.assertEqual(forward(net, np.zeros(12)).shape, (8,))

    def test_biases_through_rectifier(self):
        """On a 2-2-2 toy a zero input passes the biases through the ReLU."""
        net = QNetwork([2, 2, 2])
        net.biases[0][:] = [1.0, -1.0]
        net.weights[1][:] = [[1.0, 2.0], [3.0, 4.0]]
        net.biases[1][:] = [0.5, 0.0]
        np.testing.assert_allclose(forward(net, np.zeros(2)), [1.5, 3.0])

    def test_output_scales_with_last_layer(self):
        """Scaling the linear output layer scales the Q-values."""
        net = QNetwork.for_inputs(6, np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=6)
        before = forward(net, x)
        net.weights[-1] *= 3.0
        net.biases[-1] *= 3.0
        np.testing.assert_allclose(forward(net, x), 3.0 * before)

    def test_wrong_input_size(self):
        """Inputs of the wrong length are rejected."""
        net = QNetwork([4, 8])
        with self.assertRaises(ValueError):
            forward(net, np.zeros(5))

    def test_non_finite_input(self):
        """NaN inputs are rejected."""
        net = QNetwork([2, 8])
        with self.assertRaises(ValueError):
            forward(net, np.array([0.0, np.nan]))

    def test_dict_round_trip(self):
        """to_dict/from_dict reproduce the same outputs."""
        net = QNetwork.for_inputs(5, np.random.default_rng(4))
        clone = QNetwork.from_dict(net.to_dict())
        x = np.arange(5.0)
        np.testing.assert_array_equal(forward(clone, x), forward(net, x))


class TestBackward(unittest.TestCase):
    """Tests reverse-mode gradients."""

    def test_zero_upstream(self):
        """No upstream gradient, no gradient."""
        net = QNetwork.for_inputs(4, np.random.default_rng(0))
        grads, grad_x = backward(net, np.ones(4), np.zeros(8))
        for grad in grads:
            self.assertFalse(np.any(grad))
        self.assertFalse(np.any(grad_x))

    def test_single_linear_layer(self):
        """dW = outer(g, x), db = g, dx = W^T g."""
        net = QNetwork([3, 2], np.random.default_rng(1))
        x = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -0.7])
        (grad_w, grad_b), grad_x = backward(net, x, g)
        np.testing.assert_allclose(grad_w, np.outer(g, x))
        np.testing.assert_allclose(grad_b, g)
        np.testing.assert_allclose(grad_x, net.weights[0].T @ g)

    def test_matches_finite_differences(self):
        """Parameter and input gradients agree with central differences."""
        rng = np.random.default_rng(7)
        net = QNetwork([5, 6, 6, 8], rng)
        for bias in net.biases:
            bias[:] = rng.normal(scale=0.1, size=bias.shape)
        x = rng.normal(size=5)
        weights = rng.normal(size=8)

        def loss(inputs: np.ndarray) -> float:
            return float(weights @ forward(net, inputs))

        grads, grad_x = backward(net, x, weights)
        eps = 1e-6
        analytic, numeric = [], []
        for param, grad in zip(net.params(), grads):
            for index in np.ndindex(*param.shape):
                original = param[index]
                param[index] = original + eps
                plus = loss(x)
                param[index] = original - eps
                minus = loss(x)
                param[index] = original
                analytic.append(grad[index])
                numeric.append((plus - minus) / (2 * eps))
        self.assertLess(relative_error(np.array(analytic), np.array(numeric)), 1e-4)
        numeric_x = np.array([(loss(x + eps * e) - loss(x - eps * e)) / (2 * eps) for e in np.eye(5)])
        self.assertLess(relative_error(grad_x, numeric_x), 1e-4)


class TestLoss(unittest.TestCase):
    """Tests the squared error."""

    def test_perfect_prediction(self):
        """pred == target gives (0, 0)."""
        self.assertEqual(mse_loss(2.5, 2.5), (0.0, 0.0))

    def test_unit_error(self):
        """pred 1, target 0 gives (1, 2)."""
        self.assertEqual(mse_loss(1.0, 0.0), (1.0, 2.0))

    def test_symmetric(self):
        """Errors of opposite sign have the same loss."""
        self.assertEqual(mse_loss(3.0, 1.0)[0], mse_loss(-1.0, 1.0)[0])


class TestRmsprop(unittest.TestCase):
    """Tests the optimizer."""

    def test_first_step(self):
        """g = 1, lr = 0.001, rho = 0.9 moves the parameter by about -0.003162."""
        param = np.array([0.0])
        state = RmspropState()
        rmsprop_step([param], [np.array([1.0])], state)
        self.assertAlmostEqual(param[0], -0.003162, places=6)
        self.assertAlmostEqual(state.accumulators[0][0], 0.1)

    def test_moves_against_gradient(self):
        """Each parameter moves opposite to its gradient's sign."""
        param = np.zeros(4)
        rmsprop_step([param], [np.array([2.0, -1.0, 0.5, -3.0])], RmspropState())
        np.testing.assert_array_equal(np.sign(param), [-1.0, 1.0, -1.0, 1.0])

    def test_zero_gradient(self):
        """A zero gradient leaves the parameter unchanged."""
        param = np.array([1.5])
        rmsprop_step([param], [np.zeros(1)], RmspropState())
        self.assertEqual(param[0], 1.5)

    def test_decreases_quadratic(self):
        """Minimizing (p - 3)^2 brings p close to 3."""
        param = np.array([0.0])
        state = RmspropState(learning_rate=0.05)
        for _ in range(500):
            rmsprop_step([param], [2.0 * (param - 3.0)], state)
        self.assertLess(abs(param[0] - 3.0), 0.2)

    def test_shape_mismatch(self):
        """Gradients must match the parameters."""
        with self.assertRaises(ValueError):
            rmsprop_step([np.zeros(2)], [np.zeros(3)], RmspropState())

    def test_state_round_trip(self):
        """Optimizer state survives to_dict/from_dict."""
        state = RmspropState()
        rmsprop_step([np.zeros(2)], [np.ones(2)], state)
        restored = RmspropState.from_dict(state.to_dict())
        np.testing.assert_array_equal(restored.accumulators[0], state.accumulators[0])
        self.assertEqual(restored.rho, state.rho)


if __name__ == '__main__':
    unittest.main()
