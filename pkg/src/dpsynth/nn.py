"""Small fully connected networks with analytic backprop and DP-SGD.

Per-layer backprop keeps the per-example deltas around, which is all that
DP-SGD needs: the per-example gradient of a dense layer is the outer product
``a_i delta_i^T``, so its squared norm is ``|a_i|^2 |delta_i|^2`` and the
clipped sum is ``a^T (s * delta)``. :meth:`Mlp.per_example_grads` still
materializes the full per-example gradients for checking and for the
generic :func:`dp_sgd_step`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .exceptions import ShapeMismatch

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh", "identity", "sigmoid")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(name, z, y):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    return np.ones_like(z)


class Mlp:
    """Dense feed-forward network; weights are stored as (in, out) matrices."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], activations: Sequence[str]):
        if not (len(weights) == len(biases) == len(activations)):
            raise ShapeMismatch("weights, biases and activations must have equal length")
        for k, (W, b, a) in enumerate(zip(weights, biases, activations)):
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer {k}: weight {W.shape} / bias {b.shape}")
            if k and weights[k - 1].shape[1] != W.shape[0]:
                raise ShapeMismatch(f"layer {k} input {W.shape[0]} != previous output {weights[k - 1].shape[1]}")
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activations = list(activations)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, hidden="relu", output="identity") -> "Mlp":
        """Glorot-uniform initialization for layer ``sizes`` (in, h1, ..., out)."""
        weights, biases, acts = [], [], []
        for k in range(len(sizes) - 1):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
            acts.append(output if k == len(sizes) - 2 else hidden)
        return cls(weights, biases, acts)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases], list(self.activations))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for k, W in enumerate(self.weights):
            self.weights[k] = flat[pos:pos + W.size].reshape(W.shape).copy()
            pos += W.size
            b = self.biases[k]
            self.biases[k] = flat[pos:pos + b.size].copy()
            pos += b.size

    # -- passes -------------------------------------------------------

    def forward(self, x, return_cache: bool = False):
        a = np.asarray(x, dtype=float)
        if a.ndim != 2 or a.shape[1] != self.in_dim:
            raise ShapeMismatch(f"input shape {a.shape} does not match in_dim {self.in_dim}")
        inputs, pre, outs = [], [], []
        for W, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(a)
            z = a @ W + b
            a = _act(act, z)
            pre.append(z)
            outs.append(a)
        if return_cache:
            return a, (inputs, pre, outs)
        return a

    __call__ = forward

    def backward(self, cache, upstream):
        """Per-example deltas (dL/dz for each layer) and the input gradient."""
        inputs, pre, outs = cache
        g = np.asarray(upstream, dtype=float)
        if g.shape != outs[-1].shape:
            raise ShapeMismatch(f"upstream {g.shape} does not match output {outs[-1].shape}")
        deltas = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            delta = g * _act_grad(self.activations[k], pre[k], outs[k])
            deltas[k] = delta
            g = delta @ self.weights[k].T
        return deltas, g

    def grads_from_deltas(self, cache, deltas, weights: Optional[np.ndarray] = None) -> List[np.ndarray]:
        """Parameter gradients summed over the batch, optionally per-example weighted."""
        inputs = cache[0]
        out = []
        for a, delta in zip(inputs, deltas):
            if weights is not None:
                delta = delta * weights[:, None]
            out += [a.T @ delta, delta.sum(axis=0)]
        return out

    def per_example_sq_norms(self, cache, deltas) -> np.ndarray:
        inputs = cache[0]
        total = np.zeros(inputs[0].shape[0])
        for a, delta in zip(inputs, deltas):
            dsq = np.einsum("ij,ij->i", delta, delta)
            total += dsq * (np.einsum("ij,ij->i", a, a) + 1.0)
        return total

    def per_example_grads(self, cache, deltas) -> np.ndarray:
        """Flattened per-example gradients, shape (batch, n_params)."""
        inputs = cache[0]
        parts = []
        for a, delta in zip(inputs, deltas):
            parts.append(np.einsum("bi,bo->bio", a, delta).reshape(a.shape[0], -1))
            parts.append(delta)
        return np.concatenate(parts, axis=1)

    def gradient(self, x, upstream):
        """Convenience: summed parameter gradients for one forward/backward."""
        _, cache = self.forward(x, return_cache=True)
        deltas, _ = self.backward(cache, upstream)
        return self.grads_from_deltas(cache, deltas)

    def apply_update(self, grads: Sequence[np.ndarray], lr: float) -> None:
        for k in range(len(self.weights)):
            self.weights[k] = self.weights[k] - lr * grads[2 * k]
            self.biases[k] = self.biases[k] - lr * grads[2 * k + 1]

    # -- checkpoint -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "layers": [
                {"weight": W.tolist(), "bias": b.tolist(), "activation": a}
                for W, b, a in zip(self.weights, self.biases, self.activations)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        layers = data["layers"]
        return cls(
            [np.asarray(l["weight"], dtype=float) for l in layers],
            [np.asarray(l["bias"], dtype=float) for l in layers],
            [l["activation"] for l in layers],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))


class RmsProp:
    """RMSProp on an Mlp's parameter list; the update is post-processing of
    whatever (possibly privatized) gradient it is handed."""

    def __init__(self, lr: float, decay: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self._sq = None

    def step(self, mlp: Mlp, grads: Sequence[np.ndarray]) -> None:
        if self._sq is None:
            self._sq = [np.zeros_like(g) for g in grads]
        scaled = []
        for k, g in enumerate(grads):
            self._sq[k] = self.decay * self._sq[k] + (1.0 - self.decay) * g * g
            scaled.append(g / (np.sqrt(self._sq[k]) + self.eps))
        mlp.apply_update(scaled, self.lr)


def looped_per_example_grads(mlp: Mlp, x, upstream) -> np.ndarray:
    """Reference per-example gradients by one backward pass per sample."""
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    rows = []
    for i in range(x.shape[0]):
        grads = mlp.gradient(x[i:i + 1], upstream[i:i + 1])
        rows.append(np.concatenate([g.ravel() for g in grads]))
    return np.stack(rows)


@dataclass(frozen=True)
class DpSgdConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    batch_size: int = 64
    learning_rate: float = 0.05
    steps: int = 1000

    def __post_init__(self):
        if not self.clip_norm > 0 or self.noise_multiplier < 0:
            raise ValueError("clip_norm must be > 0 and noise_multiplier >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.steps < 1:
            raise ValueError("batch_size, learning_rate and steps must be positive")

    @property
    def noise_std(self) -> float:
        return self.noise_multiplier * self.clip_norm


def clip_factors(sq_norms: np.ndarray, clip_norm: float) -> np.ndarray:
    """Per-example scale ``min(1, C / |g|)``."""
    norms = np.sqrt(sq_norms)
    with np.errstate(divide="ignore"):
        return np.where(norms > clip_norm, clip_norm / np.where(norms > 0, norms, 1.0), 1.0)


def privatize(grad_sums: Sequence[np.ndarray], config: DpSgdConfig, rng: np.random.Generator) -> List[np.ndarray]:
    """Add N(0, (noise_multiplier*C)^2) to clipped gradient sums and average."""
    out = []
    std = config.noise_std
    for g in grad_sums:
        if std > 0:
            g = g + rng.normal(0.0, std, size=g.shape)
        out.append(g / config.batch_size)
    return out


def dp_sgd_step(mlp: Mlp, per_example_grads: np.ndarray, config: DpSgdConfig, rng: np.random.Generator) -> Mlp:
    """One DP-SGD update from flattened per-example gradients; returns a new network."""
    G = np.asarray(per_example_grads, dtype=float)
    if G.ndim != 2 or G.shape[1] != mlp.n_params:
        raise ShapeMismatch(f"per-example gradients {G.shape} vs {mlp.n_params} parameters")
    scale = clip_factors(np.einsum("ij,ij->i", G, G), config.clip_norm)
    total = (G * scale[:, None]).sum(axis=0)
    (avg,) = privatize([total], config, rng)
    new = mlp.copy()
    new.set_flat(mlp.get_flat() - config.learning_rate * avg)
    return new


def sample_batch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed-size batch without replacement (accounted as Poisson with q = B/n)."""
    return rng.choice(n, size=min(batch_size, n), replace=False)
