"""Per-step progress estimates: ground truth, synthetic noisy profiles, remote port.

The synthetic profiles mimic qualitative behaviours of vision-language
progress estimators: a late, gradual estimate with occasional hallucinated
spikes; an estimate that saturates early; and one unrelated to progress.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .env.subgoals import SubgoalTracker
from .errors import InvalidInputError, ProtocolError
from .scenegraph import SubgoalPlan
from .service import CallTelemetry, ServiceEndpoint, post_json

log = logging.getLogger(__name__)


class ProfileKind(str, enum.Enum):
    ORACLE = "oracle"
    LATE_GRADUAL = "late_gradual"
    EARLY_SATURATING = "early_saturating"
    UNCORRELATED = "uncorrelated"
    CUSTOM = "custom"


@dataclass(frozen=True)
class EstimatorProfile:
    kind: ProfileKind = ProfileKind.ORACLE
    jitter_sd: float = 0.0
    spike_prob: float = 0.0
    spike_magnitude: float = 0.5
    lag_steps: int = 0
    saturation_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if self.kind is ProfileKind.ORACLE:
            object.__setattr__(self, "jitter_sd", 0.0)
            object.__setattr__(self, "spike_prob", 0.0)
            object.__setattr__(self, "lag_steps", 0)
            object.__setattr__(self, "saturation_bias", 0.0)
        if self.jitter_sd < 0:
            raise InvalidInputError("jitter_sd must be >= 0")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise InvalidInputError("spike_prob must lie in [0, 1]")
        if not 0.0 < self.spike_magnitude <= 1.0:
            raise InvalidInputError("spike_magnitude must lie in (0, 1]")
        if self.lag_steps < 0 or int(self.lag_steps) != self.lag_steps:
            raise InvalidInputError("lag_steps must be a non-negative integer")
        if not -1.0 <= self.saturation_bias <= 1.0:
            raise InvalidInputError("saturation_bias must lie in [-1, 1]")

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "EstimatorProfile":
        kind = ProfileKind(name)
        return cls(kind=kind, seed=seed, **PRESETS.get(kind, {}))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "jitter_sd": self.jitter_sd, "spike_prob": self.spike_prob,
                "spike_magnitude": self.spike_magnitude, "lag_steps": self.lag_steps,
                "saturation_bias": self.saturation_bias, "seed": self.seed}


PRESETS = {
    ProfileKind.LATE_GRADUAL: dict(jitter_sd=0.03, spike_prob=0.05, spike_magnitude=0.6, lag_steps=2,
                                   saturation_bias=0.2),
    ProfileKind.EARLY_SATURATING: dict(jitter_sd=0.05, saturation_bias=0.6),
    ProfileKind.UNCORRELATED: dict(),
}


@dataclass
class ProgressQuery:
    plan: SubgoalPlan
    obs_prev: np.ndarray | None
    obs_curr: np.ndarray
    episode: int = 0
    step: int = 0


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def _draws(profile: EstimatorProfile, episode: int, step: int):
    rng = np.random.default_rng([profile.seed & 0xFFFFFFFF, int(episode), int(step)])
    return rng.random(), rng.standard_normal(), rng.random()


def estimate(profile: EstimatorProfile, query: ProgressQuery, true_p: float, history=()) -> float:
    """Noisy estimate of ``true_p`` at ``query.step``.

    ``history`` holds the true progress of earlier steps of the same episode
    (oldest first) and is only consulted for lagged profiles.
    """
    return _estimate(profile, query, true_p, history)[0]


def _estimate(profile, query, true_p, history):
    if not 0.0 <= true_p <= 1.0:
        raise InvalidInputError(f"true progress {true_p!r} outside [0, 1]")
    kind = profile.kind
    if kind is ProfileKind.ORACLE:
        return true_p, False
    u_spike, z, u_free = _draws(profile, query.episode, query.step)
    if kind is ProfileKind.UNCORRELATED:
        return u_free, False
    jitter = profile.jitter_sd * z
    if kind is ProfileKind.EARLY_SATURATING:
        return _clamp(true_p + abs(profile.saturation_bias) * (1.0 - true_p) + jitter), False
    # late-gradual; custom reuses it with a signed bias
    if u_spike < profile.spike_prob:
        return min(1.0, true_p + profile.spike_magnitude), True
    lag = profile.lag_steps
    if lag:
        lagged = history[-lag] if len(history) >= lag else 0.0
    else:
        lagged = true_p
    bias = profile.saturation_bias
    if kind is ProfileKind.CUSTOM and bias < 0:
        base = lagged + (-bias) * (1.0 - lagged)
    else:
        base = lagged * (1.0 - max(0.0, bias))
    return _clamp(base + jitter), False


class EpisodeEstimator:
    """Owns one episode's estimate stream (history for lag, step counter, spike log)."""

    def __init__(self, profile: EstimatorProfile, episode: int):
        self.profile = profile
        self.episode = episode
        self.history = []
        self.spikes = []

    def __call__(self, query: ProgressQuery, true_p: float) -> float:
        query.episode = self.episode
        query.step = len(self.history)
        p, spiked = _estimate(self.profile, query, true_p, self.history)
        self.history.append(true_p)
        self.spikes.append(spiked)
        return p


def true_progress(state, tracker: SubgoalTracker) -> float:
    """Ground-truth progress in [0, 1] after observing ``state``."""
    tracker.update(state)
    return tracker.progress()


@dataclass
class ExternalEstimator:
    """Remote progress estimator; optionally queried every ``every_k`` steps, holding the last value."""

    endpoint: ServiceEndpoint
    every_k: int = 1
    transport: object = None
    sleep: object = None
    clamp_warnings: int = 0
    telemetry: CallTelemetry = field(default_factory=CallTelemetry)
    _last: float | None = None

    def __call__(self, query: ProgressQuery) -> float:
        if self._last is not None and self.every_k > 1 and query.step % self.every_k:
            return self._last
        self._last = estimate_external(self.endpoint, query, self)
        return self._last


def _jsonable(obs):
    if obs is None:
        return None
    return np.asarray(obs).tolist()


def estimate_external(endpoint: ServiceEndpoint, query: ProgressQuery, counters: ExternalEstimator | None = None,
                      *, transport=None, sleep=None) -> float:
    """POST the plan and observation pair; the reply's ``progress`` is clamped into [0, 1]."""
    payload = {
        "subgoals": query.plan.to_wire()["subgoals"],
        "obs_prev": _jsonable(query.obs_prev),
        "obs_curr": _jsonable(query.obs_curr),
        "step": int(query.step),
    }
    kwargs = {"transport": transport if transport is not None else getattr(counters, "transport", None)}
    sl = sleep if sleep is not None else getattr(counters, "sleep", None)
    if sl is not None:
        kwargs["sleep"] = sl
    if counters is not None:
        kwargs["telemetry"] = counters.telemetry
    body = post_json(endpoint, payload, **kwargs)
    value = body.get("progress") if isinstance(body, dict) else None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ProtocolError(f"progress must be a finite number, got {value!r}", raw=body)
    if not 0.0 <= value <= 1.0:
        log.warning("progress %r outside [0, 1]; clamped", value)
        if counters is not None:
            counters.clamp_warnings += 1
        value = _clamp(float(value))
    return float(value)
