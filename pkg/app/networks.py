"""
Small fully-connected networks with hand-written backpropagation and an Adam optimizer.
Shared by the material encoder and the actor-critic agent.
"""
import numpy as np

from runtime_config import config


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


class Mlp:
    """
    Dense layers with ReLU between them and a linear output layer.
    Parameters are kept as a flat list [W0, b0, W1, b1, ...].
    """

    def __init__(self, widths, rng=None, output_scale=1.0):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError(f"Invalid layer widths {self.widths}")
        rng = np.random.default_rng() if rng is None else rng
        self.params = []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            if i == len(self.widths) - 2:
                weight *= output_scale
            self.params.extend([weight, np.zeros(fan_out)])

    @property
    def layer_count(self):
        return len(self.params) // 2

    def forward(self, x):
        """Returns (output, cache) for backward."""
        activation = np.atleast_2d(np.asarray(x, dtype=float))
        inputs, pre_activations = [], []
        for i in range(self.layer_count):
            weight, bias = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(activation)
            z = activation @ weight + bias
            pre_activations.append(z)
            activation = relu(z) if i < self.layer_count - 1 else z
        return activation, (inputs, pre_activations)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_output):
        """
        Gradients of a scalar loss with respect to every parameter and to the input,
        given d loss / d output.
        """
        inputs, pre_activations = cache
        grads = [None] * len(self.params)
        grad = np.atleast_2d(grad_output)
        for i in reversed(range(self.layer_count)):
            weight = self.params[2 * i]
            grads[2 * i] = inputs[i].T @ grad
            grads[2 * i + 1] = grad.sum(axis=0)
            grad = grad @ weight.T
            if i > 0:
                grad = grad * (pre_activations[i - 1] > 0)
        return grads, grad

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vector):
        offset = 0
        for i, param in enumerate(self.params):
            size = param.size
            self.params[i] = np.asarray(vector[offset:offset + size], dtype=float).reshape(param.shape).copy()
            offset += size
        if offset != len(vector):
            raise ValueError(f"Expected {offset} values, got {len(vector)}")

    def copy_params(self):
        return [p.copy() for p in self.params]

    def load_params(self, params):
        if [p.shape for p in params] != [p.shape for p in self.params]:
            raise ValueError("Parameter shapes do not match the network")
        self.params = [np.array(p, dtype=float) for p in params]

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params)


class Adam:
    def __init__(self, params, learning_rate, beta1=None, beta2=None, epsilon=None):
        self.learning_rate = learning_rate
        self.beta1 = config.ADAM_BETA1 if beta1 is None else beta1
        self.beta2 = config.ADAM_BETA2 if beta2 is None else beta2
        self.epsilon = config.ADAM_EPSILON if epsilon is None else epsilon
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Updates params in place."""
        self.step_count += 1
        correction1 = 1 - self.beta1**self.step_count
        correction2 = 1 - self.beta2**self.step_count
        for param, grad, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)

    def state(self):
        return {"step_count": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state):
        self.step_count = int(state["step_count"])
        self.m = [np.array(a, dtype=float) for a in state["m"]]
        self.v = [np.array(a, dtype=float) for a in state["v"]]
