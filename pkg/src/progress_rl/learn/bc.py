"""Behaviour cloning from A* demonstrations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..env import ChoresLiteEnv, EnvConfig, expert_trajectory
from ..errors import InvalidInputError, TaskAssignmentError
from ..scenegraph import TaskKind
from .mlp import MLP, clip_grads, log_softmax, policy_net, softmax
from .optim import Adam


@dataclass(frozen=True)
class BCConfig:
    epochs: int = 30
    lr: float = 1e-3
    minibatch_size: int = 256
    hidden: tuple = (128, 128)
    max_grad_norm: float = 5.0
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Demo:
    obs: np.ndarray      # (n, D)
    actions: np.ndarray  # (n,)


def expert_demos(houses: list, task_kinds, count: int, env_config: EnvConfig, seed: int) -> list:
    """``count`` expert episodes on houses drawn from ``houses``."""
    rng = np.random.default_rng([int(seed), 0xDE305])
    kinds = [TaskKind(k) for k in task_kinds]
    demos = []
    attempts = 0
    while len(demos) < count:
        attempts += 1
        if attempts > 50 * max(count, 1) + 1000:
            raise TaskAssignmentError("house pool cannot host the requested demo tasks")
        env = ChoresLiteEnv(houses[int(rng.integers(len(houses)))], env_config)
        try:
            state, _, _ = env.reset(kinds[int(rng.integers(len(kinds)))], int(rng.integers(1 << 31)))
        except TaskAssignmentError:
            continue
        obs, acts = [env.observe(state)], []
        for a in expert_trajectory(env.house, state):
            state, o, _, _ = env.step(a)
            acts.append(int(a))
            obs.append(o)
        demos.append(Demo(np.stack(obs[:-1]), np.asarray(acts, dtype=np.int64)))
    return demos


def cross_entropy(policy: MLP, obs, actions) -> float:
    return float(-log_softmax(policy(obs))[np.arange(len(actions)), actions].mean())


def bc_pretrain(demos: list, num_actions: int, cfg: BCConfig = BCConfig(), init: MLP | None = None):
    """Minimise cross-entropy on expert actions; returns (policy, per-epoch loss on all demo steps)."""
    if not demos:
        raise InvalidInputError("behaviour cloning needs at least one demonstration")
    obs = np.concatenate([d.obs for d in demos])
    actions = np.concatenate([d.actions for d in demos])
    if len(actions) == 0:
        raise InvalidInputError("demonstrations contain no steps")
    rng = np.random.default_rng([cfg.seed, 0xBC])
    policy = init.copy() if init is not None else policy_net(obs.shape[1], num_actions, rng, cfg.hidden)
    opt = Adam(policy.arrays, cfg.lr)
    n = len(actions)
    mb = min(cfg.minibatch_size, n)
    losses = [cross_entropy(policy, obs, actions)]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, mb):
            idx = order[s:s + mb]
            logits, acts = policy.forward(obs[idx])
            dz = softmax(logits)
            dz[np.arange(len(idx)), actions[idx]] -= 1.0
            grads = policy.backward(acts, dz / len(idx))
            grads, _ = clip_grads(grads, cfg.max_grad_norm)
            opt.step(grads)
        losses.append(cross_entropy(policy, obs, actions))
    return policy, losses
