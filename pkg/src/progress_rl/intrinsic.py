"""Self-certainty of a discrete action distribution.

Self-certainty is ``-(1/|A|) * sum_i log(|A| * pi(i))``, algebraically the KL
divergence from the uniform distribution to ``pi``. It is zero for a uniform
policy and grows as probability mass concentrates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

PROB_FLOOR = 1e-8


@dataclass(frozen=True)
class ActionDistribution:
    probabilities: tuple

    def __init__(self, probabilities, prob_floor: float = PROB_FLOOR):
        object.__setattr__(self, "probabilities", _floor_and_normalize(probabilities, prob_floor))

    @property
    def size(self) -> int:
        return len(self.probabilities)


def _floor_and_normalize(probs, floor: float) -> tuple:
    try:
        raw = [float(p) for p in probs]
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"probabilities must be numeric: {exc}") from None
    if len(raw) < 2:
        raise InvalidInputError("action space must contain at least two actions")
    if not all(math.isfinite(p) for p in raw):
        raise InvalidInputError("probabilities must be finite")
    total = math.fsum(raw)
    if total <= 0.0:
        raise InvalidInputError("probabilities cannot be normalized (non-positive mass)")
    p = [q / total for q in raw]
    floored = set()
    # pin small entries at the floor and rescale the rest until none drop below
    while True:
        low = {i for i, q in enumerate(p) if q < floor} - floored
        if not low:
            return tuple(p)
        floored |= low
        free = [i for i in range(len(p)) if i not in floored]
        mass = math.fsum(p[i] for i in free)
        scale = (1.0 - floor * len(floored)) / mass
        p = [floor if i in floored else q * scale for i, q in enumerate(p)]


def _coerce(dist) -> tuple:
    if isinstance(dist, ActionDistribution):
        return dist.probabilities
    return ActionDistribution(dist).probabilities


def self_certainty(dist) -> float:
    """Natural-log self-certainty; ``dist`` is an ActionDistribution or raw probabilities."""
    p = _coerce(dist)
    n = len(p)
    # fsum makes the value independent of action ordering
    return -math.fsum(math.log(n * q) for q in p) / n


def kl_from_uniform(dist) -> float:
    p = _coerce(dist)
    n = len(p)
    u = 1.0 / n
    return math.fsum(u * math.log(u / q) for q in p)


def self_certainty_batch(probs: np.ndarray, prob_floor: float = PROB_FLOOR) -> np.ndarray:
    """Row-wise self-certainty of an (N, |A|) array of probabilities."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise InvalidInputError("expected an (N, |A|) array with |A| >= 2")
    p = np.maximum(probs / probs.sum(axis=1, keepdims=True), prob_floor)
    p = p / p.sum(axis=1, keepdims=True)
    n = p.shape[1]
    return -np.log(n * p).sum(axis=1) / n


def self_certainty_grad_logits(probs: np.ndarray) -> np.ndarray:
    """Gradient of self-certainty with respect to softmax logits: ``pi - 1/|A|``."""
    probs = np.asarray(probs, dtype=float)
    return probs - 1.0 / probs.shape[-1]
