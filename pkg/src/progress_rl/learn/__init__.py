"""Policy/value networks, behaviour cloning and two-stage PPO training."""
from .bc import BCConfig, Demo, bc_pretrain, expert_demos
from .mlp import MLP, forward_policy, policy_net, value_net
from .ppo import PPOConfig, PPOLearner, ppo_update
from .rollout import RolloutBuffer, collect_rollouts, finalize_rewards, gae_advantages
from .train import TrainConfig, TrainResult, arm_config, train, value_init_stage

__all__ = [
    "BCConfig", "Demo", "MLP", "PPOConfig", "PPOLearner", "RolloutBuffer", "TrainConfig", "TrainResult",
    "arm_config", "bc_pretrain", "collect_rollouts", "expert_demos", "finalize_rewards", "forward_policy",
    "gae_advantages", "policy_net", "ppo_update", "train", "value_init_stage", "value_net",
]
