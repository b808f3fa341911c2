"""Feed-forward tanh networks with hand-written backpropagation."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..intrinsic import ActionDistribution


@dataclass
class MLP:
    """Affine layers with tanh between them; the last layer is linear."""

    sizes: tuple
    weights: list
    biases: list

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_scale: float = 0.01) -> "MLP":
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidInputError(f"bad layer sizes {sizes}")
        weights, biases = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = out_scale if i == len(sizes) - 2 else 1.0
            weights.append(rng.standard_normal((a, b)) * (scale / np.sqrt(a)))
            biases.append(np.zeros(b))
        return cls(sizes, weights, biases)

    @classmethod
    def zeros(cls, sizes) -> "MLP":
        sizes = tuple(int(s) for s in sizes)
        return cls(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    @property
    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def descriptor(self) -> dict:
        return {"sizes": list(self.sizes), "activation": "tanh"}

    def digest(self) -> str:
        h = hashlib.sha256(repr(self.sizes).encode())
        for a in self.arrays:
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()

    def check(self):
        for a in self.arrays:
            if not np.all(np.isfinite(a)):
                raise InvalidInputError("non-finite network parameter")

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a batch ``x`` of shape (n, sizes[0])."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise InvalidInputError(f"expected input of width {self.sizes[0]}, got shape {x.shape}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts: list, dout: np.ndarray) -> list:
        """Gradients (same order as ``arrays``) given d(loss)/d(output)."""
        grads = [None] * (2 * len(self.weights))
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = (g @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_net(obs_dim: int, num_actions: int, rng, hidden=(128, 128)) -> MLP:
    return MLP.init((obs_dim, *hidden, num_actions), rng, out_scale=0.01)


def value_net(obs_dim: int, rng, hidden=(128, 128)) -> MLP:
    return MLP.init((obs_dim, *hidden, 1), rng, out_scale=1.0)


def forward_policy(params: MLP, obs) -> ActionDistribution:
    """Action distribution for a single observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise InvalidInputError("forward_policy takes one observation vector")
    return ActionDistribution(softmax(params(obs[None])[0]))


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grads(grads, max_norm: float):
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = [g * scale for g in grads]
    return grads, norm
