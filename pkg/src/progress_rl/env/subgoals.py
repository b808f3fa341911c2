"""Executable verification predicates for subgoal plans."""
from __future__ import annotations

from collections import deque

import numpy as np

from ..errors import PlanningError
from ..scenegraph import SubgoalPlan, TaskKind
from .world import ChoresLiteEnv, EnvState

# f stays strictly below 1 until the predicate itself is satisfied
_F_CAP = 1.0 - 1e-6


def _distance_map(env: ChoresLiteEnv, goals) -> np.ndarray:
    h = env.house
    dist = np.full((h.height, h.width), np.inf)
    q = deque()
    for x, y in goals:
        if h.passable((x, y)) and dist[y, x] == np.inf:
            dist[y, x] = 0
            q.append((x, y))
    while q:
        x, y = q.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (x + dx, y + dy)
            if h.passable(n) and dist[n[1], n[0]] == np.inf:
                dist[n[1], n[0]] = dist[y, x] + 1
                q.append(n)
    return dist


def predicate_now(env: ChoresLiteEnv, state: EnvState, subgoal) -> bool:
    """Raw (unlatched) truth of one subgoal predicate."""
    p, t = subgoal.predicate, subgoal.target
    if p == "enter":
        room = env.house.room_at(state.agent_cell)
        return room is not None and room.room_id == t
    if p == "grasp":
        return state.held_object == t
    if p == "approach":
        return state.held_object == t or env.object_cell(state, t) == state.front_cell()
    if p == "sight":
        return env.visible(state, t)
    raise PlanningError(f"unknown predicate {p!r}")


class SubgoalTracker:
    """Latches plan predicates over an episode and measures intra-subgoal progress.

    Object-centric plans latch strictly in order (subgoal k only after k-1);
    room-coverage plans latch each room whenever it is entered.
    """

    def __init__(self, env: ChoresLiteEnv, plan: SubgoalPlan):
        self.env = env
        self.plan = plan
        self.K = plan.K
        if self.K < 1:
            raise PlanningError("plan has no subgoals")
        rooms = {r.room_id for r in env.house.rooms}
        objects = {o.object_id for o in env.house.objects}
        for g in plan.subgoals:
            known = rooms if g.predicate == "enter" else objects
            if g.target not in known:
                raise PlanningError(f"subgoal {g.index} targets unknown entity {g.target!r}")
        self.ordered = not (env.state is not None and env.state.task.kind is TaskKind.ROOMVISIT)
        self._maps = []
        for g in plan.subgoals:
            if g.predicate == "enter":
                goals = env.house.room(g.target).cells()
            else:
                ox, oy = env.house.obj(g.target).cell
                goals = [(ox + dx, oy + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))]
            self._maps.append(_distance_map(env, goals))
        self.latched = [False] * self.K
        self._active_key = None
        self._d_start = 0.0
        self._d_best = 0.0

    def reset(self, state: EnvState):
        self.latched = [False] * self.K
        self._active_key = None
        self.update(state)

    def update(self, state: EnvState) -> list:
        if self.ordered:
            k = self.completed()
            while k < self.K and predicate_now(self.env, state, self.plan.subgoals[k]):
                self.latched[k] = True
                k += 1
        else:
            for k, g in enumerate(self.plan.subgoals):
                if not self.latched[k] and predicate_now(self.env, state, g):
                    self.latched[k] = True
        self._track_distance(state)
        return list(self.latched)

    def completed(self) -> int:
        if not self.ordered:
            return sum(self.latched)
        k = 0
        while k < self.K and self.latched[k]:
            k += 1
        return k

    def _distance(self, state: EnvState) -> float:
        x, y = state.agent_cell
        if self.ordered:
            return float(self._maps[self.completed()][y, x])
        return float(min(self._maps[k][y, x] for k in range(self.K) if not self.latched[k]))

    def _track_distance(self, state: EnvState):
        if self.completed() >= self.K:
            return
        key = tuple(self.latched)
        d = self._distance(state)
        if key != self._active_key:
            self._active_key = key
            self._d_start = self._d_best = d
        else:
            self._d_best = min(self._d_best, d)

    def fraction(self) -> float:
        """Share of the active subgoal's starting distance already covered (best so far)."""
        if self.completed() >= self.K or self._d_start <= 0 or not np.isfinite(self._d_start):
            return 0.0
        return min(max(1.0 - self._d_best / self._d_start, 0.0), _F_CAP)

    def progress(self) -> float:
        c = self.completed()
        if c >= self.K:
            return 1.0
        return (c + self.fraction()) / self.K


def subgoal_status(tracker: SubgoalTracker, state: EnvState) -> list:
    """Latched truth values of every plan predicate after observing ``state``."""
    return tracker.update(state)
