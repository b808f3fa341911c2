"""Clipped-surrogate PPO with analytic gradients."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidInputError, NonFiniteLossError
from .mlp import MLP, clip_grads, log_softmax
from .optim import Adam
from .rollout import RolloutBuffer, gae_advantages, normalize


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs_per_batch: int = 4
    minibatch_size: int = 256
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    rollout_length: int = 128
    num_envs: int = 8

    def __post_init__(self):
        checks = {
            "clip_eps": 0 < self.clip_eps < 1, "gamma": 0 <= self.gamma <= 1, "gae_lambda": 0 <= self.gae_lambda <= 1,
            "epochs_per_batch": self.epochs_per_batch >= 1, "minibatch_size": self.minibatch_size >= 1,
            "policy_lr": self.policy_lr > 0, "value_lr": self.value_lr > 0, "entropy_coef": self.entropy_coef >= 0,
            "value_coef": self.value_coef > 0, "max_grad_norm": self.max_grad_norm >= 0,
            "rollout_length": self.rollout_length >= 1, "num_envs": self.num_envs >= 1,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise InvalidInputError(f"PPO settings out of range: {', '.join(bad)}")

    def to_dict(self) -> dict:
        return asdict(self)


def policy_loss_and_grads(policy: MLP, obs, actions, old_logp, adv, clip_eps: float, entropy_coef: float):
    """Negative clipped surrogate minus the entropy bonus, averaged over the batch."""
    logits, acts = policy.forward(obs)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    n = len(actions)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = np.minimum(ratio * adv, clipped * adv)
    ent = -(p * logp_all).sum(axis=1)
    loss = -surr.mean() - entropy_coef * ent.mean()
    # the surrogate carries gradient unless the clipped branch is the active minimum
    active = ~(((adv > 0) & (ratio > 1.0 + clip_eps)) | ((adv < 0) & (ratio < 1.0 - clip_eps)))
    d_logp = -(active * ratio * adv) / n
    dz = -p * d_logp[:, None]
    dz[idx, actions] += d_logp
    dz += (entropy_coef / n) * p * (logp_all + ent[:, None])
    stats = {
        "policy_loss": float(-surr.mean()),
        "entropy": float(ent.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "kl": float(np.mean((ratio - 1.0) - (logp - old_logp))),
        "ratio_max_dev": float(np.max(np.abs(ratio - 1.0))),
    }
    return float(loss), policy.backward(acts, dz), stats


def value_loss_and_grads(value: MLP, obs, returns, coef: float = 0.5):
    out, acts = value.forward(obs)
    err = out[:, 0] - returns
    loss = coef * float(np.mean(err * err))
    dout = (2.0 * coef / len(err)) * err[:, None]
    return loss, value.backward(acts, dout)


class PPOLearner:
    """Owns the two optimisers so their moments persist across buffers."""

    def __init__(self, policy: MLP, value: MLP, cfg: PPOConfig, rng: np.random.Generator):
        self.policy, self.value, self.cfg, self.rng = policy, value, cfg, rng
        self.pi_opt = Adam(policy.arrays, cfg.policy_lr)
        self.v_opt = Adam(value.arrays, cfg.value_lr)

    def update(self, buf: RolloutBuffer, update_policy: bool = True) -> dict:
        return ppo_update(self, buf, update_policy=update_policy)


def _check_finite(loss, batch, what):
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite {what} loss", dump={k: np.asarray(v).tolist() for k, v in batch.items()})


def ppo_update(learner: PPOLearner, buf: RolloutBuffer, update_policy: bool = True) -> dict:
    """Several epochs of minibatch updates on one finalized buffer.

    With ``update_policy=False`` only the value function moves (frozen-policy stage).
    """
    cfg = learner.cfg
    if buf.rewards is None:
        raise InvalidInputError("buffer rewards not finalized")
    adv, ret = gae_advantages(buf.rewards, buf.values, buf.dones, buf.last_values, cfg.gamma, cfg.gae_lambda)
    n = len(buf)
    D = buf.obs.shape[-1]
    obs = buf.obs.reshape(n, D)
    actions = buf.actions.reshape(n)
    old_logp = buf.logp.reshape(n)
    ret = ret.reshape(n)
    adv = normalize(adv.reshape(n))
    mb = min(cfg.minibatch_size, n)
    agg = {}
    first_ratio_dev = None
    count = 0
    for epoch in range(cfg.epochs_per_batch):
        order = learner.rng.permutation(n)
        for s in range(0, n, mb):
            idx = order[s:s + mb]
            batch = {"obs": obs[idx], "actions": actions[idx], "old_logp": old_logp[idx], "adv": adv[idx],
                     "returns": ret[idx]}
            stats = {}
            if update_policy:
                pl, pg, stats = policy_loss_and_grads(learner.policy, batch["obs"], batch["actions"],
                                                      batch["old_logp"], batch["adv"], cfg.clip_eps, cfg.entropy_coef)
                _check_finite(pl, batch, "policy")
                if first_ratio_dev is None:
                    first_ratio_dev = stats["ratio_max_dev"]
                pg, stats["policy_grad_norm"] = clip_grads(pg, cfg.max_grad_norm)
                learner.pi_opt.step(pg)
            vl, vg = value_loss_and_grads(learner.value, batch["obs"], batch["returns"], cfg.value_coef)
            _check_finite(vl, batch, "value")
            vg, stats["value_grad_norm"] = clip_grads(vg, cfg.max_grad_norm)
            learner.v_opt.step(vg)
            stats["value_loss"] = vl
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    out = {k: v / count for k, v in agg.items()}
    out.pop("ratio_max_dev", None)
    if first_ratio_dev is not None:
        out["first_ratio_dev"] = first_ratio_dev
    out["mean_return"] = float(ret.mean())
    return out
