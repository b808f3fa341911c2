"""Procedurally generated multi-room gridworld with long-horizon household tasks."""
from .house import HouseParams, HouseSpec, generate_house, generate_pool, render_ascii
from .planning import astar_min_steps, expert_trajectory
from .subgoals import SubgoalTracker, predicate_now, subgoal_status
from .world import Action, ChoresLiteEnv, EnvConfig, EnvState, TaskSpec, obs_dim_for

__all__ = [
    "Action", "ChoresLiteEnv", "EnvConfig", "EnvState", "HouseParams", "HouseSpec", "SubgoalTracker",
    "TaskSpec", "astar_min_steps", "expert_trajectory", "generate_house", "generate_pool", "predicate_now",
    "obs_dim_for", "render_ascii", "subgoal_status",
]
