"""Dense tanh MLPs with hand-written backprop and an Adam optimizer.

Everything is float64. Forward and backward accept a single input vector or a
batch of row vectors; batched gradients are summed over rows.
"""

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step is asked to apply NaN/inf gradients."""


@dataclass
class Mlp:
    weights: list  # weights[i] has shape (layer_dims[i+1], layer_dims[i])
    biases: list

    @property
    def layer_dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def params(self):
        """Parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class GradientSet:
    weights: list
    biases: list
    input: np.ndarray

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class _Cache:
    inputs: list = field(default_factory=list)  # input to each layer
    hidden: list = field(default_factory=list)  # tanh outputs of hidden layers
    batched: bool = False


def init_params(layer_dims, seed):
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer_dims {layer_dims!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(net, x):
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.shape[1] != net.weights[0].shape[1]:
        raise ValueError(f"input width {h.shape[1]} != {net.weights[0].shape[1]}")
    cache = _Cache(batched=batched)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        a = h @ w.T + b
        if i < last:
            h = np.tanh(a)
            cache.hidden.append(h)
        else:
            h = a
    return (h if batched else h[0]), cache


def mlp_backward(net, cache, upstream):
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input."""
    g = np.asarray(upstream, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    if len(cache.inputs) != len(net.weights) or g.shape[1] != net.weights[-1].shape[0]:
        raise ValueError("cache does not belong to this network")
    n_layers = len(net.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        h_in = cache.inputs[i]
        if h_in.shape[0] != g.shape[0] or h_in.shape[1] != net.weights[i].shape[1]:
            raise ValueError("stale cache")
        gw[i] = g.T @ h_in
        gb[i] = g.sum(axis=0)
        g = g @ net.weights[i]
        if i > 0:
            g = g * (1.0 - cache.hidden[i - 1] ** 2)
    return GradientSet(gw, gb, g if cache.batched else g[0])


def adam_init(params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    ``params`` are updated in place (they are usually views into a model) and
    returned together with ``state``. Nothing is modified if any gradient is
    non-finite.
    """
    if isinstance(grads, GradientSet):
        grads = grads.params()
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state are not congruent")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient; update rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
