"""Extrinsic progress rewards: spike suppression + running-maximum differencing.

A progress trace holds one estimate in [0, 1] per environment step. The reward
at step t is the increment of the running maximum of the (filtered) trace, so
an episode never collects more than its peak progress in total.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError

# A 9-step window: 4 neighbours on each side of the centre.
DEFAULT_HALF_WIDTH = 4


@dataclass(frozen=True)
class ProgressTrace:
    episode_id: object
    values: tuple

    def __init__(self, episode_id, values):
        vals = tuple(float(v) for v in values)
        if len(vals) == 0:
            raise InvalidInputError("progress trace must contain at least one value")
        for v in vals:
            if not (0.0 <= v <= 1.0):
                raise InvalidInputError(f"progress value {v!r} outside [0, 1]")
        object.__setattr__(self, "episode_id", episode_id)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class FilterConfig:
    """Spike filter settings: ``half_width`` steps on each side, cutoff ``threshold``."""

    half_width: int = DEFAULT_HALF_WIDTH
    threshold: float = 0.2

    def __post_init__(self):
        if int(self.half_width) != self.half_width or self.half_width < 1:
            raise InvalidInputError(f"half_width must be a positive integer, got {self.half_width!r}")
        if not (0.0 < self.threshold <= 1.0):
            raise InvalidInputError(f"threshold must lie in (0, 1], got {self.threshold!r}")

    @classmethod
    def for_plan(cls, num_subgoals: int, half_width: int = DEFAULT_HALF_WIDTH) -> "FilterConfig":
        """Threshold set to the reciprocal of the number of subgoals."""
        if num_subgoals < 1:
            raise InvalidInputError("plan must have at least one subgoal")
        return cls(half_width=half_width, threshold=1.0 / num_subgoals)


@dataclass(frozen=True)
class RewardTrace:
    values: tuple
    # Filtered progress that fed the running maximum (None when unfiltered).
    filtered: tuple | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.values)

    def total(self) -> float:
        return sum(self.values)


def _as_values(trace) -> list:
    if isinstance(trace, ProgressTrace):
        return list(trace.values)
    vals = [float(v) for v in trace]
    if not vals:
        raise InvalidInputError("empty progress trace")
    return vals


def _running_max_diffs(values: Sequence[float], initial_max: float = 0.0) -> list:
    out = []
    rmp = initial_max
    for v in values:
        if v > rmp:
            out.append(v - rmp)
            rmp = v
        else:
            out.append(0.0)
    return out


def running_max_rewards(trace, initial_max: float = 0.0) -> RewardTrace:
    """Reward each step by how much it raises the running maximum.

    ``initial_max`` continues an episode whose earlier steps were scored in a
    previous buffer; leave it at 0 for whole episodes.
    """
    values = _as_values(trace)
    return RewardTrace(tuple(_running_max_diffs(values, initial_max)))


def window_median(values: Sequence[float]) -> float:
    """Median; an even count averages the two middle order statistics."""
    s = sorted(float(v) for v in values)
    n = len(s)
    if n == 0:
        raise InvalidInputError("cannot take the median of an empty window")
    mid = n // 2
    if n % 2:
        return s[mid]
    return (s[mid - 1] + s[mid]) / 2


def _neighbor_medians(p: np.ndarray, s: int) -> np.ndarray:
    n = len(p)
    med = np.empty(n)
    lo_end = min(s, n)
    hi_start = max(n - s, lo_end)
    # interior: full window of 2s neighbours, always even-sized
    if hi_start > lo_end:
        win = sliding_window_view(p, 2 * s + 1)
        neigh = np.sort(np.delete(win, s, axis=1), axis=1)
        med[lo_end:hi_start] = (neigh[:, s - 1] + neigh[:, s]) / 2
    # boundary windows are clamped to the trace
    for i in list(range(lo_end)) + list(range(hi_start, n)):
        lo, hi = max(0, i - s), min(n, i + s + 1)
        med[i] = window_median(np.concatenate((p[lo:i], p[i + 1:hi])))
    return med


def suppress_spikes(trace, cfg: FilterConfig) -> ProgressTrace:
    """Zero every estimate that exceeds the median of its neighbours by more than the threshold."""
    values = _as_values(trace)
    ep = trace.episode_id if isinstance(trace, ProgressTrace) else None
    if len(values) == 1:
        return ProgressTrace(ep, values)
    p = np.asarray(values, dtype=float)
    med = _neighbor_medians(p, int(cfg.half_width))
    out = np.where(p - med > cfg.threshold, 0.0, p)
    return ProgressTrace(ep, out.tolist())


def saturation_safe_rewards(trace, cfg: FilterConfig, *, return_intermediate: bool = False,
                            initial_max: float = 0.0) -> RewardTrace:
    """Spike suppression followed by running-maximum differencing.

    With ``return_intermediate`` the filtered progress (first pass) is attached
    to the result as ``filtered``.
    """
    filtered = suppress_spikes(trace, cfg)
    rewards = _running_max_diffs(filtered.values, initial_max)
    return RewardTrace(tuple(rewards), filtered.values if return_intermediate else None)
