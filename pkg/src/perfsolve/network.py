"""Fourier-feature MLP with hand-derived backpropagation and Adam.

The input map x -> [cos(Ax); sin(Ax)] uses a fixed Gaussian frequency matrix
A (never trained); dense layers are Glorot-normal initialized.  All arithmetic
is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class NetworkConfig:
    fourier_pairs: int
    sigma2: float
    hidden_dims: tuple[int, ...]
    activation: str = "tanh"
    input_dim: int = 2
    output_dim: int = 1

    def __post_init__(self):
        if self.fourier_pairs < 1:
            raise ValueError("fourier_pairs must be >= 1")
        if not self.hidden_dims:
            raise ValueError("hidden_dims must be nonempty")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def to_dict(self) -> dict:
        return {"fourier_pairs": self.fourier_pairs, "sigma2": self.sigma2,
                "hidden_dims": list(self.hidden_dims), "activation": self.activation,
                "input_dim": self.input_dim, "output_dim": self.output_dim}

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        return NetworkConfig(d["fourier_pairs"], d["sigma2"], tuple(d["hidden_dims"]),
                             d.get("activation", "tanh"), d.get("input_dim", 2),
                             d.get("output_dim", 1))


@dataclass
class FourierNetwork:
    config: NetworkConfig
    A: np.ndarray                   # (m, 2) frozen frequency matrix
    weights: list[np.ndarray]       # per dense layer, shape (fan_in, fan_out)
    biases: list[np.ndarray]        # per dense layer, shape (fan_out,)

    def copy(self) -> "FourierNetwork":
        return FourierNetwork(self.config, self.A,
                              [w.copy() for w in self.weights],
                              [b.copy() for b in self.biases])

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        k = 0
        for i in range(len(self.weights)):
            self.weights[i] = params[k]
            self.biases[i] = params[k + 1]
            k += 2


def init_network(cfg: NetworkConfig, seed: int) -> FourierNetwork:
    """A ~ N(0, sigma2) frozen; dense layers Glorot normal, zero biases."""
    rng = np.random.default_rng(seed)
    m = cfg.fourier_pairs
    A = rng.normal(0.0, np.sqrt(cfg.sigma2), size=(m, cfg.input_dim))
    dims = [2 * m, *cfg.hidden_dims, cfg.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return FourierNetwork(cfg, A, weights, biases)


def constant_network(cfg: NetworkConfig, seed: int, value: float) -> FourierNetwork:
    """Initialized network whose output is exactly the given constant."""
    net = init_network(cfg, seed)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = value
    return net


def embed(net: FourierNetwork, points: np.ndarray) -> np.ndarray:
    phase = points @ net.A.T  # (n, m)
    return np.concatenate([np.cos(phase), np.sin(phase)], axis=1)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _activate_grad(name: str, a: np.ndarray, z: np.ndarray) -> np.ndarray:
    # a is the activation output, available from the forward cache
    return 1.0 - a * a if name == "tanh" else (z > 0.0).astype(z.dtype)


def forward(net: FourierNetwork, points: np.ndarray,
            cache: Optional[list] = None) -> np.ndarray:
    """Batched evaluation; points (n, 2) -> values (n,).

    When cache is a list it is filled with intermediates for backward().
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.isfinite(points).all():
        raise ValueError("non-finite input points")
    h = embed(net, points)
    if cache is not None:
        cache.append(h)
    n_layers = len(net.weights)
    for i in range(n_layers - 1):
        z = h @ net.weights[i] + net.biases[i]
        h = _activate(net.config.activation, z)
        if cache is not None:
            cache.append((z, h))
    out = h @ net.weights[-1] + net.biases[-1]
    return out[:, 0]


def backward(net: FourierNetwork, points: np.ndarray,
             upstream: np.ndarray) -> list[np.ndarray]:
    """Gradient of sum_i upstream_i * u(x_i) w.r.t. dense parameters.

    Returns [dW0, db0, dW1, db1, ...]; the embedding matrix is frozen and
    receives no gradient.
    """
    cache: list = []
    forward(net, points, cache=cache)
    upstream = np.asarray(upstream, dtype=float).reshape(-1, 1)
    n_layers = len(net.weights)
    grads: list[Optional[np.ndarray]] = [None] * (2 * n_layers)
    h_last = cache[-1][1] if n_layers > 1 else cache[0]
    grads[-2] = h_last.T @ upstream
    grads[-1] = upstream.sum(axis=0)
    delta = upstream @ net.weights[-1].T
    for i in range(n_layers - 2, -1, -1):
        z, a = cache[i + 1]
        delta = delta * _activate_grad(net.config.activation, a, z)
        h_prev = cache[i][1] if i > 0 else cache[0]
        grads[2 * i] = h_prev.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i].T
    return grads


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.99
    beta2: float = 0.99
    epsilon: float = 1e-8

    @staticmethod
    def for_network(net: FourierNetwork, beta1: float = 0.99,
                    beta2: float = 0.99, epsilon: float = 1e-8) -> "AdamState":
        params = net.params()
        return AdamState([np.zeros_like(p) for p in params],
                         [np.zeros_like(p) for p in params],
                         0, beta1, beta2, epsilon)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[k] = b1 * state.first_moment[k] + (1 - b1) * g
        v = state.second_moment[k] = b2 * state.second_moment[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return out


def learning_rate(alpha0: float, gamma: float, iteration: int) -> float:
    """Staircase exponential decay: one gamma factor per 1000 iterations."""
    return alpha0 * gamma ** (iteration // 1000)


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line, then raw little-endian float64
# arrays in declaration order (A row-major, then per-layer weight and bias).
# ---------------------------------------------------------------------------

def save_checkpoint(net: FourierNetwork, path, seed: int, iteration: int) -> None:
    header = {"config": net.config.to_dict(), "seed": seed, "iteration": iteration}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(np.ascontiguousarray(net.A, dtype="<f8").tobytes())
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[FourierNetwork, dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        cfg = NetworkConfig.from_dict(header["config"])
        raw = f.read()
    dims = [2 * cfg.fourier_pairs, *cfg.hidden_dims, cfg.output_dim]
    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset * 8)
        offset += size
        return arr.reshape(shape).astype(np.float64)

    A = take((cfg.fourier_pairs, cfg.input_dim))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(take((fan_in, fan_out)))
        biases.append(take((fan_out,)))
    return FourierNetwork(cfg, A, weights, biases), header
