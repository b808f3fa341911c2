"""Stage-gated full reward.

Stage I (value initialization) pays only the weighted progress reward; Stage II
(policy finetuning) pays the weighted self-certainty plus the weighted sparse
task-success signal.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

from .errors import InvalidInputError


class StageId(str, enum.Enum):
    STAGE_I = "stage_i"
    STAGE_II = "stage_ii"


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0
    beta: float = 0.1
    phi: float = 10.0
    # self-certainty is clipped to this ceiling before weighting
    sc_ceiling: float = 5.0

    def __post_init__(self):
        for name in ("alpha", "beta", "phi", "sc_ceiling"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidInputError(f"weight {name} must be finite and >= 0, got {v!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RewardWeights":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class RewardInputs:
    r_vlm: float = 0.0
    r_sc: float = 0.0
    r_task: float = 0.0

    def __post_init__(self):
        for name in ("r_vlm", "r_sc", "r_task"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if self.r_vlm < 0 or self.r_sc < 0:
            raise InvalidInputError("r_vlm and r_sc must be non-negative")
        if self.r_task not in (0, 1):
            raise InvalidInputError(f"r_task must be 0 or 1, got {self.r_task!r}")


def compose(stage: StageId, w: RewardWeights, r: RewardInputs) -> float:
    stage = StageId(stage)
    if stage is StageId.STAGE_I:
        return w.alpha * r.r_vlm
    return w.beta * min(r.r_sc, w.sc_ceiling) + w.phi * r.r_task


def stage_at(env_steps: int, stage1_steps: int) -> StageId:
    """Stage of the global training clock; episodes keep the stage they started in."""
    return StageId.STAGE_I if env_steps < stage1_steps else StageId.STAGE_II
