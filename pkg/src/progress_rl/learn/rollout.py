"""Rollout collection, stage-gated reward finalization and GAE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..composer import RewardWeights, StageId
from ..env import ChoresLiteEnv, EnvConfig, SubgoalTracker
from ..errors import ContractViolationError, InvalidInputError, TaskAssignmentError
from ..estimator import EpisodeEstimator, EstimatorProfile, ProgressQuery, true_progress
from ..intrinsic import self_certainty_batch
from ..progress_core import FilterConfig, ProgressTrace, _running_max_diffs, suppress_spikes
from ..scenegraph import TaskKind, decompose_oracle
from .mlp import MLP, log_softmax, softmax


@dataclass
class EpisodeRecord:
    """Progress history of one episode; survives across buffers while the episode runs."""

    key: tuple
    K: int = 1
    progress: list = field(default_factory=list)
    # highest filtered progress already paid out in earlier buffers
    credited_max: float = 0.0


@dataclass
class TraceFragment:
    record: EpisodeRecord
    start: int
    end: int
    env_index: int
    t0: int

    def trace(self) -> ProgressTrace:
        return ProgressTrace(self.record.key, self.record.progress[self.start:self.end])


class EnvWorker:
    """One environment slot: owns its env, its random stream and its episode counter."""

    def __init__(self, index: int, houses: list, task_kinds, env_config: EnvConfig, seed: int,
                 profile: EstimatorProfile | None = None, estimator_factory=None, decomposer=None):
        if not houses:
            raise InvalidInputError("worker needs at least one house")
        self.index = index
        self.houses = houses
        self.task_kinds = [TaskKind(k) for k in task_kinds]
        self.env_config = env_config
        self.rng = np.random.default_rng([int(seed), 0xC011EC7, int(index)])
        self.profile = profile or EstimatorProfile()
        # estimator_factory(episode) -> callable(query, true_p); decomposer(graph, instr) -> plan
        self.estimator_factory = estimator_factory
        self.decomposer = decomposer or decompose_oracle
        self.episodes = 0
        self.env = None
        self.obs = None

    def reset(self):
        for _ in range(1000):
            house = self.houses[int(self.rng.integers(len(self.houses)))]
            kind = self.task_kinds[int(self.rng.integers(len(self.task_kinds)))]
            env = ChoresLiteEnv(house, self.env_config)
            try:
                state, instr, graph = env.reset(kind, int(self.rng.integers(1 << 31)))
            except TaskAssignmentError:
                continue
            break
        else:
            raise TaskAssignmentError("no house in the pool can host the requested tasks")
        self.env = env
        self.plan = self.decomposer(graph, instr)
        self.tracker = SubgoalTracker(env, self.plan)
        self.tracker.reset(state)
        self.record = EpisodeRecord((self.index, self.episodes), self.plan.K)
        episode = (self.index << 24) + self.episodes
        if self.estimator_factory is None:
            self.estimator = EpisodeEstimator(self.profile, episode)
        else:
            self.estimator = self.estimator_factory(episode)
        self.episodes += 1
        self.obs = env.observe(state)
        return self.obs


@dataclass
class RolloutBuffer:
    obs: np.ndarray            # (T, E, D)
    actions: np.ndarray        # (T, E)
    logp: np.ndarray           # (T, E) behaviour log-probability
    probs: np.ndarray          # (T, E, A) behaviour distribution
    values: np.ndarray         # (T, E)
    r_vlm: np.ndarray          # (T, E) raw progress estimate (Stage I only)
    r_sc: np.ndarray           # (T, E) self-certainty (Stage II only)
    r_task: np.ndarray         # (T, E)
    dones: np.ndarray          # (T, E)
    episode_ids: np.ndarray    # (T, E, 2) worker index, episode index
    last_values: np.ndarray    # (E,) bootstrap values for unfinished episodes
    stage: StageId
    fragments: list = field(default_factory=list)
    rewards: np.ndarray | None = None
    episodes: list = field(default_factory=list)  # finished: (success, steps, t_min, kind)

    @property
    def shape(self):
        return self.actions.shape

    def __len__(self):
        return self.actions.size


def policy_step(policy: MLP, obs: np.ndarray, rng, greedy=False):
    """Sample (or argmax) actions for a batch; returns (actions, logp, probs)."""
    logits = policy(obs)
    probs = softmax(logits)
    if greedy:
        actions = np.argmax(probs, axis=1)
    else:
        u = rng.random(len(probs))
        cdf = np.cumsum(probs, axis=1)
        actions = np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)
    logp = log_softmax(logits)[np.arange(len(actions)), actions]
    return actions, logp, probs


def collect_rollouts(policy: MLP, value: MLP, workers: list, stage: StageId, rollout_length: int,
                     rng: np.random.Generator) -> RolloutBuffer:
    """Step every worker ``rollout_length`` times; workers keep unfinished episodes for the next call."""
    stage = StageId(stage)
    T, E = int(rollout_length), len(workers)
    if T < 1 or E < 1:
        raise InvalidInputError("rollout_length and num_envs must be positive")
    for w in workers:
        if w.obs is None:
            w.reset()
    D = workers[0].obs.shape[0]
    A = policy.sizes[-1]
    if A != workers[0].env.num_actions:
        raise ContractViolationError(f"policy has {A} outputs, env has {workers[0].env.num_actions} actions")
    buf = RolloutBuffer(
        obs=np.zeros((T, E, D)), actions=np.zeros((T, E), dtype=np.int64), logp=np.zeros((T, E)),
        probs=np.zeros((T, E, A)), values=np.zeros((T, E)), r_vlm=np.zeros((T, E)), r_sc=np.zeros((T, E)),
        r_task=np.zeros((T, E)), dones=np.zeros((T, E), dtype=bool), episode_ids=np.zeros((T, E, 2), dtype=np.int64),
        last_values=np.zeros(E), stage=stage,
    )
    starts = [(len(w.record.progress), 0) for w in workers]
    for t in range(T):
        obs = np.stack([w.obs for w in workers])
        actions, logp, probs = policy_step(policy, obs, rng)
        buf.obs[t] = obs
        buf.actions[t] = actions
        buf.logp[t] = logp
        buf.probs[t] = probs
        buf.values[t] = value(obs)[:, 0]
        if stage is StageId.STAGE_II:
            buf.r_sc[t] = self_certainty_batch(probs)
        for e, w in enumerate(workers):
            buf.episode_ids[t, e] = w.record.key
            state, nobs, r_task, done = w.env.step(int(actions[e]))
            buf.r_task[t, e] = r_task
            buf.dones[t, e] = done
            if stage is StageId.STAGE_I:
                p_true = true_progress(state, w.tracker)
                p = w.estimator(ProgressQuery(w.plan, w.obs, nobs), p_true)
                w.record.progress.append(p)
                buf.r_vlm[t, e] = p
            if done:
                buf.episodes.append((int(state.success), state.step_count, w.env.t_min, w.env.instruction.kind.value))
                if stage is StageId.STAGE_I:
                    s0, t0 = starts[e]
                    buf.fragments.append(TraceFragment(w.record, s0, len(w.record.progress), e, t0))
                w.reset()
                starts[e] = (0, t + 1)
            else:
                w.obs = nobs
    for e, w in enumerate(workers):
        s0, t0 = starts[e]
        if stage is StageId.STAGE_I and t0 < T:
            buf.fragments.append(TraceFragment(w.record, s0, len(w.record.progress), e, t0))
    buf.last_values = value(np.stack([w.obs for w in workers]))[:, 0]
    return buf


def finalize_rewards(buf: RolloutBuffer, weights: RewardWeights, filter_cfg: FilterConfig | None,
                     plan_threshold: bool = False) -> RolloutBuffer:
    """Attach one scalar reward per step according to the buffer's stage.

    Stage I filters each episode's progress (everything seen so far in that
    episode) and pays running-maximum increments for this buffer's steps only.
    ``filter_cfg=None`` skips spike suppression; ``plan_threshold`` replaces
    its threshold by one over the episode's plan length.
    """
    rewards = np.zeros(buf.shape)
    if buf.stage is StageId.STAGE_I:
        covered = np.zeros(buf.shape, dtype=int)
        for fr in buf.fragments:
            n = fr.end - fr.start
            if fr.t0 + n > buf.shape[0]:
                raise ContractViolationError("progress trace longer than its buffer slot")
            if n == 0:
                continue
            rows = slice(fr.t0, fr.t0 + n)
            if not np.array_equal(buf.r_vlm[rows, fr.env_index], fr.record.progress[fr.start:fr.end]):
                raise ContractViolationError(f"progress trace of episode {fr.record.key} misaligned with buffer")
            full = fr.record.progress[:fr.end]
            if filter_cfg is None:
                filt = full
            else:
                cfg = FilterConfig.for_plan(fr.record.K, filter_cfg.half_width) if plan_threshold else filter_cfg
                filt = suppress_spikes(full, cfg).values
            inc = _running_max_diffs(filt[fr.start:fr.end], fr.record.credited_max)
            fr.record.credited_max = max([fr.record.credited_max, *filt[fr.start:fr.end]])
            rewards[rows, fr.env_index] = weights.alpha * np.asarray(inc)
            covered[rows, fr.env_index] += 1
        if not np.all(covered == 1):
            raise ContractViolationError("stage I steps not covered exactly once by progress traces")
    else:
        rewards = weights.beta * np.minimum(buf.r_sc, weights.sc_ceiling) + weights.phi * buf.r_task
    buf.rewards = rewards
    return buf


def gae_advantages(rewards, values, dones, last_values, gamma: float, lam: float):
    """Generalised advantage estimates and returns; arrays are (T,) or (T, E).

    Episodes cut by ``dones`` do not bootstrap; the final row bootstraps from
    ``last_values``.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    if not (r.shape == v.shape == d.shape):
        raise InvalidInputError("rewards, values and dones must share a shape")
    adv = np.zeros_like(r)
    nxt_v = np.asarray(last_values, dtype=float)
    nxt_a = np.zeros_like(nxt_v)
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * nxt_v * live - v[t]
        nxt_a = delta + gamma * lam * live * nxt_a
        adv[t] = nxt_a
        nxt_v = v[t]
    return adv, adv + v


def normalize(adv: np.ndarray) -> np.ndarray:
    sd = adv.std()
    return (adv - adv.mean()) / (sd + 1e-8)
