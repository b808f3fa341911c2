"""Success, SEL, held-out evaluation and arm comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import ChoresLiteEnv, EnvConfig, expert_trajectory
from .errors import InvalidInputError, TaskAssignmentError
from .learn.mlp import MLP
from .learn.rollout import policy_step
from .scenegraph import TaskKind

Z95 = 1.959963984540054


def sel(success: int, t_min: int, t: int) -> float:
    """Success weighted by episode length."""
    if t < 1 or t_min < 1:
        raise InvalidInputError(f"episode lengths must be positive (t={t}, t_min={t_min})")
    if success not in (0, 1):
        raise InvalidInputError(f"success must be 0 or 1, got {success!r}")
    return success * t_min / max(t_min, t)


@dataclass(frozen=True)
class EpisodeResult:
    success: int
    steps: int
    t_min: int
    kind: str
    seed: int

    def __post_init__(self):
        if self.steps < 1 or self.t_min < 1 or self.success not in (0, 1):
            raise InvalidInputError(f"invalid episode result {self}")

    @property
    def sel(self) -> float:
        return sel(self.success, self.t_min, self.steps)


@dataclass(frozen=True)
class Summary:
    n: int
    success: float
    sel: float
    success_sd: float
    sel_sd: float

    @property
    def success_hw(self) -> float:
        return Z95 * self.success_sd / math.sqrt(self.n)

    @property
    def sel_hw(self) -> float:
        return Z95 * self.sel_sd / math.sqrt(self.n)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(success_hw=self.success_hw, sel_hw=self.sel_hw)
        return d

    @classmethod
    def of(cls, results) -> "Summary":
        if not results:
            raise InvalidInputError("cannot summarise zero episodes")
        s = np.array([r.success for r in results], dtype=float)
        e = np.array([r.sel for r in results])
        return cls(len(results), float(s.mean()), float(e.mean()), float(s.std()), float(e.std()))


@dataclass
class EvalReport:
    per_task: dict
    overall: Summary
    config_hash: str = ""
    episodes: list = field(default_factory=list, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "overall": self.overall.to_dict(),
                "per_task": {k: v.to_dict() for k, v in sorted(self.per_task.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        def summ(x):
            return Summary(int(x["n"]), x["success"], x["sel"], x["success_sd"], x["sel_sd"])
        return cls({k: summ(v) for k, v in d["per_task"].items()}, summ(d["overall"]), d.get("config_hash", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self, arm: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arm", "task", "n", "success", "success_hw", "sel", "sel_hw"])
        for task, s in [*sorted(self.per_task.items()), ("overall", self.overall)]:
            w.writerow([arm, task, s.n, repr(s.success), repr(s.success_hw), repr(s.sel), repr(s.sel_hw)])
        return buf.getvalue()


def aggregate(results, config_hash: str = "", keep_episodes: bool = True) -> EvalReport:
    by_task = {}
    for r in results:
        by_task.setdefault(r.kind, []).append(r)
    return EvalReport({k: Summary.of(v) for k, v in by_task.items()}, Summary.of(list(results)), config_hash,
                      list(results) if keep_episodes else [])


def greedy_actor(policy: MLP, greedy: bool = True):
    def act(env, state, obs, rng):
        a, _, _ = policy_step(policy, obs[None], rng, greedy=greedy)
        return int(a[0])
    return act


def expert_actor():
    """Replays the A* plan computed at the first step of each episode."""
    cache = {}

    def act(env, state, obs, rng):
        key = id(env)
        if state.step_count == 0 or key not in cache:
            cache.clear()
            cache[key] = list(expert_trajectory(env.house, state))
        return int(cache[key].pop(0))
    return act


def evaluate(policy, houses: list, task_kinds, episodes_per_task: int, seed: int,
             env_config: EnvConfig = EnvConfig(), greedy: bool = True, config_hash: str = "") -> EvalReport:
    """Run ``episodes_per_task`` episodes of every task kind on ``houses``.

    ``policy`` is an MLP (argmax actions unless ``greedy`` is False) or a
    callable ``(env, state, obs, rng) -> action``.
    """
    if not houses:
        raise InvalidInputError("evaluation needs a non-empty house set")
    act = greedy_actor(policy, greedy) if isinstance(policy, MLP) else policy
    results = []
    for ki, kind in enumerate(TaskKind(k) for k in task_kinds):
        rng = np.random.default_rng([int(seed), 0xE7A1, ki])
        done_eps = 0
        tries = 0
        while done_eps < episodes_per_task:
            tries += 1
            if tries > 50 * episodes_per_task + 100:
                raise TaskAssignmentError(f"house set cannot host {kind.value}")
            env = ChoresLiteEnv(houses[int(rng.integers(len(houses)))], env_config)
            ep_seed = int(rng.integers(1 << 31))
            try:
                state, _, _ = env.reset(kind, ep_seed)
            except TaskAssignmentError:
                continue
            obs = env.observe(state)
            done = False
            while not done:
                state, obs, _, done = env.step(act(env, state, obs, rng))
            results.append(EpisodeResult(int(state.success), state.step_count, env.t_min, kind.value, ep_seed))
            done_eps += 1
    return aggregate(results, config_hash)


@dataclass(frozen=True)
class DeltaRow:
    task: str
    d_success: float
    d_success_hw: float
    d_sel: float
    d_sel_hw: float


def _pooled(sd_a, n_a, sd_b, n_b):
    return Z95 * math.sqrt(sd_a ** 2 / n_a + sd_b ** 2 / n_b)


def compare(a: EvalReport, b: EvalReport) -> list:
    """Per-task (and overall) differences ``a - b`` with pooled 95% half-widths."""
    if set(a.per_task) != set(b.per_task):
        raise InvalidInputError(f"task sets differ: {sorted(a.per_task)} vs {sorted(b.per_task)}")
    rows = []
    for task, sa, sb in [*((k, a.per_task[k], b.per_task[k]) for k in sorted(a.per_task)), ("overall", a.overall, b.overall)]:
        rows.append(DeltaRow(task, sa.success - sb.success, _pooled(sa.success_sd, sa.n, sb.success_sd, sb.n),
                             sa.sel - sb.sel, _pooled(sa.sel_sd, sa.n, sb.sel_sd, sb.n)))
    return rows


def deltas_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "d_success", "d_success_hw", "d_sel", "d_sel_hw"])
    for r in rows:
        w.writerow([r.task, repr(r.d_success), repr(r.d_success_hw), repr(r.d_sel), repr(r.d_sel_hw)])
    return buf.getvalue()
