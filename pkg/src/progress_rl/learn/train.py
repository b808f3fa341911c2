"""Two-stage training: value initialisation on progress rewards, then PPO finetuning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..composer import RewardWeights, StageId
from ..env import EnvConfig
from ..errors import ContractViolationError, InvalidInputError
from ..estimator import EstimatorProfile
from ..progress_core import DEFAULT_HALF_WIDTH, FilterConfig
from .mlp import MLP, value_net
from .ppo import PPOConfig, PPOLearner
from .rollout import EnvWorker, RolloutBuffer, collect_rollouts, finalize_rewards

# value-initialisation budget relative to finetuning (200K of 50M steps)
STAGE1_RATIO = 0.004
# below this a 128x128 value net has not fit the progress returns yet
STAGE1_MIN_STEPS = 16_384


@dataclass(frozen=True)
class TrainConfig:
    stage2_steps: int = 100_000
    # None: STAGE1_RATIO of stage2_steps (at least STAGE1_MIN_STEPS), rounded up to whole buffers
    stage1_steps: int | None = None
    ppo: PPOConfig = field(default_factory=PPOConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    estimator: EstimatorProfile = field(default_factory=lambda: EstimatorProfile.preset("late_gradual"))
    use_filter: bool = True
    filter_half_width: int = DEFAULT_HALF_WIDTH
    # None: one over the episode's plan length
    filter_threshold: float | None = None
    gamma_stage1: float | None = None
    task_kinds: tuple = ("objnav",)
    eval_every: int = 0
    value_hidden: tuple = (128, 128)
    seed: int = 0

    def __post_init__(self):
        if self.stage2_steps < 0 or (self.stage1_steps is not None and self.stage1_steps < 0):
            raise InvalidInputError("stage step budgets must be >= 0")
        if self.eval_every < 0:
            raise InvalidInputError("eval_every must be >= 0")
        if not self.task_kinds:
            raise InvalidInputError("at least one task kind is required")
        FilterConfig(self.filter_half_width, self.filter_threshold or 1.0)

    @property
    def buffer_steps(self) -> int:
        return self.ppo.rollout_length * self.ppo.num_envs

    @property
    def resolved_stage1_steps(self) -> int:
        if self.stage1_steps is not None:
            return self.stage1_steps
        if self.stage2_steps == 0:
            return 0
        want = max(STAGE1_RATIO * self.stage2_steps, STAGE1_MIN_STEPS)
        return int(math.ceil(want / self.buffer_steps)) * self.buffer_steps

    def filter_config(self) -> FilterConfig | None:
        if not self.use_filter:
            return None
        return FilterConfig(self.filter_half_width, self.filter_threshold or 1.0)


@dataclass
class TrainResult:
    policy: MLP
    value: MLP
    log: list
    env_steps: int


def _train_episode_stats(buf: RolloutBuffer) -> dict:
    if not buf.episodes:
        return {"episodes": 0}
    s = np.array([e[0] for e in buf.episodes], dtype=float)
    e = np.array([ok * tm / max(tm, t) for ok, t, tm, _ in buf.episodes])
    return {"episodes": len(buf.episodes), "success_rate": float(s.mean()), "sel": float(e.mean())}


def value_init_stage(policy: MLP, learner: PPOLearner, workers: list, cfg: TrainConfig, steps: int,
                     rng: np.random.Generator, on_update=None) -> int:
    """Fit the value function to filtered progress returns; the policy is not touched."""
    before = policy.digest()
    ppo = cfg.ppo if cfg.gamma_stage1 is None else replace(cfg.ppo, gamma=cfg.gamma_stage1)
    stage_learner = PPOLearner(policy, learner.value, ppo, learner.rng)
    stage_learner.v_opt = learner.v_opt
    done = 0
    while done < steps:
        buf = collect_rollouts(policy, learner.value, workers, StageId.STAGE_I, ppo.rollout_length, rng)
        finalize_rewards(buf, cfg.weights, cfg.filter_config(), plan_threshold=cfg.filter_threshold is None)
        stats = stage_learner.update(buf, update_policy=False)
        done += len(buf)
        if on_update is not None:
            on_update(done, buf, stats)
    if policy.digest() != before:
        raise ContractViolationError("policy parameters changed during value initialisation")
    return done


def train(cfg: TrainConfig, houses: list, policy: MLP, env_config: EnvConfig = EnvConfig(), *,
          eval_fn=None, checkpoint_fn=None, log_fn=None, estimator_factory=None, decomposer=None) -> TrainResult:
    """Stage I then Stage II from a pretrained ``policy`` (modified in place).

    ``eval_fn(policy) -> EvalReport`` runs every ``eval_every`` steps and at the end;
    ``checkpoint_fn(tag, policy, value, step)`` is called at each stage end and after evals;
    ``log_fn(record)`` receives every metrics record as it is produced.
    ``estimator_factory`` and ``decomposer`` swap in external progress and plan services.
    """
    log = []

    def emit(rec):
        log.append(rec)
        if log_fn is not None:
            log_fn(rec)

    v_rng, act_rng, upd_rng = (np.random.default_rng(s)
                               for s in np.random.SeedSequence([int(cfg.seed), 0x7A1B]).spawn(3))
    workers = [EnvWorker(i, houses, cfg.task_kinds, env_config, cfg.seed, cfg.estimator,
                         estimator_factory, decomposer) for i in range(cfg.ppo.num_envs)]
    obs_dim = workers[0].reset().shape[0]
    if policy.sizes[0] != obs_dim:
        raise ContractViolationError(f"policy expects observations of width {policy.sizes[0]}, env gives {obs_dim}")
    value = value_net(obs_dim, v_rng, cfg.value_hidden)
    learner = PPOLearner(policy, value, cfg.ppo, upd_rng)
    steps = 0
    next_eval = cfg.eval_every or None

    def maybe_eval(force=False):
        nonlocal next_eval
        if eval_fn is None:
            return
        due = next_eval is not None and steps >= next_eval
        if not (due or force):
            return
        while next_eval is not None and steps >= next_eval:
            next_eval += cfg.eval_every
        rep = eval_fn(policy)
        emit({"kind": "eval", "step": steps, "stage": stage.value, "success_rate": rep.overall.success,
              "sel": rep.overall.sel, "episodes": rep.overall.n})
        if checkpoint_fn is not None:
            checkpoint_fn(f"step{steps:09d}", policy, value, steps)

    stage = StageId.STAGE_I
    s1 = cfg.resolved_stage1_steps

    def on_stage1(done, buf, stats):
        nonlocal steps
        steps = done
        emit({"kind": "update", "step": steps, "stage": stage.value, "losses": {"value": stats["value_loss"]},
              "mean_return": stats["mean_return"], **_train_episode_stats(buf)})

    if s1 > 0:
        value_init_stage(policy, learner, workers, cfg, s1, act_rng, on_update=on_stage1)
    emit({"kind": "stage_boundary", "step": steps, "stage": StageId.STAGE_II.value})
    if checkpoint_fn is not None:
        checkpoint_fn("stage1", policy, value, steps)
    stage = StageId.STAGE_II
    # Stage-I episodes still running are dropped: every episode keeps the stage it began in
    for w in workers:
        w.reset()
    stage2_start = steps
    while steps - stage2_start < cfg.stage2_steps:
        buf = collect_rollouts(policy, value, workers, StageId.STAGE_II, cfg.ppo.rollout_length, act_rng)
        finalize_rewards(buf, cfg.weights, None)
        stats = learner.update(buf)
        steps += len(buf)
        emit({"kind": "update", "step": steps, "stage": stage.value,
              "losses": {"policy": stats["policy_loss"], "value": stats["value_loss"], "entropy": stats["entropy"]},
              "clip_frac": stats["clip_frac"], "kl": stats["kl"], "mean_return": stats["mean_return"],
              **_train_episode_stats(buf)})
        maybe_eval()
    if not log or log[-1]["kind"] != "eval":
        maybe_eval(force=True)
    if checkpoint_fn is not None:
        checkpoint_fn("final", policy, value, steps)
    return TrainResult(policy, value, log, steps)


def arm_config(arm: str, base: TrainConfig) -> TrainConfig:
    """Ablation arms: base (sparse only), scr (+ self-certainty), vlm (+ value init), full (both)."""
    w = base.weights
    arms = {
        "base": dict(stage1_steps=0, weights=replace(w, beta=0.0)),
        "scr": dict(stage1_steps=0, weights=replace(w, beta=0.1 if w.beta == 0 else w.beta)),
        "vlm": dict(stage1_steps=base.stage1_steps, weights=replace(w, beta=0.0)),
        "full": dict(stage1_steps=base.stage1_steps, weights=replace(w, beta=0.1 if w.beta == 0 else w.beta)),
    }
    if arm not in arms:
        raise InvalidInputError(f"unknown arm {arm!r}; choose from {sorted(arms)}")
    return replace(base, **arms[arm])

