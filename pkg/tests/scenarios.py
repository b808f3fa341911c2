"""Seeded episode batches shared by integration and acceptance tests."""
import numpy as np

from progress_rl.env import ChoresLiteEnv, HouseParams, SubgoalTracker, expert_trajectory, generate_house
from progress_rl.errors import ProgressRLError
from progress_rl.estimator import EpisodeEstimator, EstimatorProfile, ProfileKind, ProgressQuery, true_progress
from progress_rl.progress_core import FilterConfig, running_max_rewards, saturation_safe_rewards
from progress_rl.scenegraph import TaskKind, decompose_oracle

SPIKY = EstimatorProfile(ProfileKind.LATE_GRADUAL, jitter_sd=0.03, spike_prob=0.05, spike_magnitude=0.6,
                         lag_steps=2, saturation_bias=0.2, seed=0)


def expert_estimate_streams(n, profile=SPIKY, kind=TaskKind.FETCH):
    """(estimates, spike flags, true progress) for ``n`` expert episodes on seeded houses."""
    out = []
    seed = 0
    while len(out) < n:
        seed += 1
        try:
            house = generate_house(seed, HouseParams(width=11, height=11, rooms_min=2, rooms_max=4))
            env = ChoresLiteEnv(house)
            state, instr, graph = env.reset(kind, seed)
        except ProgressRLError:
            continue
        plan = decompose_oracle(graph, instr)
        tracker = SubgoalTracker(env, plan)
        tracker.reset(state)
        est = EpisodeEstimator(profile, seed)
        prev = env.observe(state)
        values, truth = [], []
        for a in expert_trajectory(house, state):
            state, obs, _, _ = env.step(a)
            p = true_progress(state, tracker)
            truth.append(p)
            values.append(est(ProgressQuery(plan, prev, obs), p))
            prev = obs
        out.append((values, list(est.spikes), truth))
    return out


def post_spike_starvation(streams, cfg=FilterConfig(threshold=0.2)):
    """Fraction of spiking episodes that earn nothing after the first spike: (raw, filtered, count)."""
    raw = filt = n = 0
    for values, spikes, _ in streams:
        if not any(spikes):
            continue
        i = spikes.index(True)
        n += 1
        raw += sum(running_max_rewards(values).values[i + 1:]) == 0
        filt += sum(saturation_safe_rewards(values, cfg).values[i + 1:]) == 0
    return raw / n, filt / n, n


def expert_progress_returns(houses, n_states, gamma=0.99, seed=5, half_width=4):
    """Observations along expert episodes and their remaining discounted filtered-progress return."""
    rng = np.random.default_rng(seed)
    obs, returns = [], []
    while len(obs) < n_states:
        env = ChoresLiteEnv(houses[int(rng.integers(len(houses)))])
        try:
            state, instr, graph = env.reset(TaskKind.OBJNAV, int(rng.integers(1 << 30)))
        except ProgressRLError:
            continue
        plan = decompose_oracle(graph, instr)
        tracker = SubgoalTracker(env, plan)
        tracker.reset(state)
        seen, progress = [env.observe(state)], []
        for a in expert_trajectory(env.house, state):
            state, o, _, _ = env.step(a)
            progress.append(true_progress(state, tracker))
            seen.append(o)
        r = saturation_safe_rewards(progress, FilterConfig.for_plan(plan.K, half_width)).values
        acc, g = 0.0, []
        for x in reversed(r):
            acc = x + gamma * acc
            g.append(acc)
        obs += seen[:-1]
        returns += g[::-1]
    return np.array(obs), np.array(returns)


DESK_HOUSES = HouseParams(width=9, height=9, rooms_min=1, rooms_max=3, objects_min=1, objects_max=2)


def desk_pools(train_count=200, test_count=100):
    """Training houses and unseen test houses from disjoint seed ranges."""
    from progress_rl.env import generate_pool
    return (generate_pool(DESK_HOUSES, 1, train_count, 1_000_000),
            generate_pool(DESK_HOUSES, 1_000_000, test_count, 2_000_000))


def desk_bc_policy(train_houses, seed, demos=300):
    from progress_rl.env import EnvConfig
    from progress_rl.learn import BCConfig, bc_pretrain, expert_demos
    return bc_pretrain(expert_demos(train_houses, ["objnav"], demos, EnvConfig(), seed), 10,
                       BCConfig(seed=seed))[0]


def desk_arm_run(arm, seed, bc, train_houses, test_houses, stage2_steps, eval_every, curve_episodes=50,
                 final_episodes=200):
    """One ablation arm from a BC policy; returns the final report and the periodic success curve."""
    from progress_rl.learn import TrainConfig, arm_config, train
    from progress_rl.metrics import evaluate
    cfg = arm_config(arm, TrainConfig(stage2_steps=stage2_steps, eval_every=eval_every, seed=seed))
    curve = []

    def periodic(pol):
        return evaluate(pol, test_houses, ["objnav"], curve_episodes, seed=100 + seed)

    res = train(cfg, train_houses, bc.copy(), eval_fn=periodic)
    curve = [(r["step"] - cfg.resolved_stage1_steps, r["success_rate"]) for r in res.log if r["kind"] == "eval"]
    final = evaluate(res.policy, test_houses, ["objnav"], final_episodes, seed=7 + seed)
    return {"arm": arm, "seed": seed, "final": final, "curve": curve, "log": res.log}
