"""Small fully connected networks with hand-written backpropagation.

Everything here works in float64 on numpy arrays. A network maps either a
single input vector of shape ``(n_in,)`` or a batch of shape ``(n, n_in)``;
weights are stored ``(n_out, n_in)`` per layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .serialize import dumps

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "log_softmax")


class ShapeError(ValueError):
    """Raised when array dimensions do not match the network contract."""


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _views(flat: np.ndarray, sizes: Sequence[int]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    ws, bs = [], []
    i = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        ws.append(flat[i:i + n_in * n_out].reshape(n_out, n_in))
        i += n_in * n_out
        bs.append(flat[i:i + n_out])
        i += n_out
    return ws, bs


def _n_params(sizes: Sequence[int]) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


class Gradients:
    """Per-layer gradients backed by one flat array laid out like :attr:`Mlp.theta`."""

    def __init__(self, sizes: Sequence[int], data: np.ndarray | None = None):
        self.sizes = list(sizes)
        self.data = np.zeros(_n_params(sizes)) if data is None else data
        self.weights, self.biases = _views(self.data, self.sizes)

    def flat(self) -> np.ndarray:
        return self.data.copy()

    def scale(self, c: float) -> "Gradients":
        return Gradients(self.sizes, c * self.data)

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(self.sizes, self.data + other.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))


class Mlp:
    """Dense feedforward network.

    Parameters
    ----------
    layer_sizes : sequence of int
        ``(n_in, hidden..., n_out)``.
    hidden_activation : {"relu", "tanh"}
    output_activation : {"identity", "log_softmax"}
    rng : numpy Generator, optional
        Source for Glorot-uniform initialization. Without one the network
        starts at all-zero weights.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        hidden_activation: str = "relu",
        output_activation: str = "identity",
        rng: np.random.Generator | None = None,
    ):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ShapeError(f"invalid layer sizes {sizes}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        # weights and biases are views into theta
        self.theta = np.zeros(_n_params(sizes))
        self.weights, self.biases = _views(self.theta, sizes)
        if rng is not None:
            for w in self.weights:
                n_out, n_in = w.shape
                limit = np.sqrt(6.0 / (n_in + n_out))
                w[...] = rng.uniform(-limit, limit, size=(n_out, n_in))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def copy(self) -> "Mlp":
        other = Mlp(self.layer_sizes, self.hidden_activation, self.output_activation)
        other.theta[...] = self.theta
        return other

    def same_architecture(self, other: "Mlp") -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.hidden_activation == other.hidden_activation
            and self.output_activation == other.output_activation
        )

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.layer_sizes[0]:
            raise ShapeError(f"input shape {x.shape} does not match n_in={self.layer_sizes[0]}")
        return x

    def forward_cache(self, x) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Pre- and post-activations of every layer; ``post[-1]`` is the output."""
        return self._forward_cache(self._check_input(x))

    def _forward_cache(self, x: np.ndarray):
        pre, post = [], [x]
        a = x
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pre.append(z)
            if l < last:
                a = _act(self.hidden_activation, z)
            elif self.output_activation == "log_softmax":
                a = log_softmax(z)
            else:
                a = z
            post.append(a)
        return pre, post

    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        return self._forward_cache(x)[1][-1]

    __call__ = forward

    def backward(self, x, upstream, cache=None) -> Gradients:
        """Gradient of ``sum(upstream * forward(x))`` w.r.t. every parameter.

        For batched input the per-row contributions are summed. ``cache`` is
        an optional :meth:`forward_cache` result for the same ``x``.
        """
        x = self._check_input(x)
        upstream = np.asarray(upstream, dtype=np.float64)
        out_shape = x.shape[:-1] + (self.layer_sizes[-1],)
        if upstream.shape != out_shape:
            raise ShapeError(f"upstream shape {upstream.shape}, expected {out_shape}")
        pre, post = self._forward_cache(x) if cache is None else cache
        batched = x.ndim == 2
        if self.output_activation == "log_softmax":
            p = np.exp(post[-1])
            delta = upstream - p * upstream.sum(axis=-1, keepdims=True)
        else:
            delta = upstream
        g = Gradients(self.layer_sizes)
        for l in range(self.n_layers - 1, -1, -1):
            a_prev = post[l]
            if batched:
                np.matmul(delta.T, a_prev, out=g.weights[l])
                delta.sum(axis=0, out=g.biases[l])
            else:
                np.multiply(delta[:, None], a_prev[None, :], out=g.weights[l])
                g.biases[l][...] = delta
            if l > 0:
                da = delta @ self.weights[l]
                delta = da * _act_grad(self.hidden_activation, pre[l - 1], post[l])
        return g

    def zero_gradients(self) -> Gradients:
        return Gradients(self.layer_sizes)

    def get_flat(self) -> np.ndarray:
        return self.theta.copy()

    def set_flat(self, theta: np.ndarray) -> None:
        self.theta[...] = theta

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls(d["layer_sizes"], d["hidden_activation"], d["output_activation"])
        for l, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != net.weights[l].shape or b.shape != net.biases[l].shape:
                raise ShapeError(f"layer {l}: checkpoint shapes {w.shape}/{b.shape} do not chain")
            net.weights[l][...] = w
            net.biases[l][...] = b
        return net

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class OptimizerState:
    """SGD or Adam state for one network (accumulators are flat like ``Mlp.theta``)."""

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.adam_m is not None:
            self.adam_m = np.asarray(self.adam_m, dtype=np.float64)
            self.adam_v = np.asarray(self.adam_v, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step_count": self.step_count,
            "adam_m": None if self.adam_m is None else self.adam_m.tolist(),
            "adam_v": None if self.adam_v is None else self.adam_v.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerState":
        return cls(**d)


def apply_update(net: Mlp, grads: Gradients, opt: OptimizerState) -> None:
    """Take one descent step on ``net`` in place and advance ``opt``."""
    if grads.data.shape != net.theta.shape or grads.sizes != net.layer_sizes:
        raise ShapeError("gradient shapes do not match network")
    g = grads.data
    opt.step_count += 1
    if opt.kind == "sgd":
        net.theta -= opt.learning_rate * g
        return
    if opt.adam_m is None:
        opt.adam_m = np.zeros_like(net.theta)
        opt.adam_v = np.zeros_like(net.theta)
    elif opt.adam_m.shape != net.theta.shape:
        raise ShapeError("optimizer state does not match network")
    t = opt.step_count
    b1, b2 = opt.beta1, opt.beta2
    m, v = opt.adam_m, opt.adam_v
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    step = opt.learning_rate / (1.0 - b1 ** t)
    denom = np.sqrt(v / (1.0 - b2 ** t))
    denom += opt.epsilon
    net.theta -= step * m / denom


def gradient_check(
    net: Mlp,
    x,
    loss: Callable[[np.ndarray], float],
    loss_grad: Callable[[np.ndarray], np.ndarray],
    h: float = 1e-4,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss`` maps the network output to a scalar and ``loss_grad`` returns its
    derivative w.r.t. that output. Inputs sitting exactly on a ReLU kink are
    not meaningful here; pick networks with nonzero pre-activations.
    """
    analytic = net.backward(x, loss_grad(net.forward(x))).flat()
    theta = net.get_flat()
    numeric = np.empty_like(theta)
    probe = net.copy()
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        probe.set_flat(t)
        up = loss(probe.forward(x))
        t[i] -= 2 * h
        probe.set_flat(t)
        down = loss(probe.forward(x))
        numeric[i] = (up - down) / (2 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
