"""A* minimum-step oracle and expert trajectories.

Search runs over (cell, heading, holding-target, visited-room mask) with unit
action costs. The heuristic is the Manhattan gap to the goal (one cell per
action at most) plus the interaction actions still required, which never
overestimates; nodes are reopened when a cheaper path shows up, so the
returned cost is optimal even where the heuristic is not consistent.
"""
from __future__ import annotations

import heapq

from ..errors import InfeasibleTaskError
from .house import HouseSpec
from .world import DIRS, Action, EnvState

_MOVES = (Action.MOVE_FWD, Action.MOVE_BACK, Action.ROTATE_L, Action.ROTATE_R)


class _Problem:
    def __init__(self, house: HouseSpec, state: EnvState):
        self.house = house
        self.pred = state.task.success_predicate
        self.rooms = [r.room_id for r in house.rooms]
        self.room_bit = {rid: 1 << i for i, rid in enumerate(self.rooms)}
        self.full_mask = (1 << len(self.rooms)) - 1
        if self.pred == "visited_all_rooms":
            self.target_cell = None
        else:
            idx = [o.object_id for o in house.objects].index(state.task.target_ids[0])
            self.target_cell = state.object_cells[idx]
        mask = 0
        for rid in state.visited_rooms:
            mask |= self.room_bit[rid]
        held = state.held_object is not None and state.held_object in state.task.target_ids
        self.start = (state.agent_cell, state.heading, held, mask)
        self.room_cells = {rid: house.room(rid).cells() for rid in self.rooms}

    def satisfied(self, node) -> bool:
        cell, h, held, mask = node
        if self.pred == "visited_all_rooms":
            return mask == self.full_mask
        if self.pred == "holding_target":
            return held
        dx, dy = DIRS[h]
        return (cell[0] + dx, cell[1] + dy) == self.target_cell

    def successors(self, node):
        cell, h, held, mask = node
        dx, dy = DIRS[h]
        for a in _MOVES:
            if a in (Action.MOVE_FWD, Action.MOVE_BACK):
                s = 1 if a == Action.MOVE_FWD else -1
                nxt = (cell[0] + s * dx, cell[1] + s * dy)
                if not self.house.passable(nxt):
                    continue
                room = self.house.room_at(nxt)
                m = mask | self.room_bit[room.room_id] if room is not None else mask
                yield a, (nxt, h, held, m)
            else:
                nh = (h + (3 if a == Action.ROTATE_L else 1)) % 4
                yield a, (cell, nh, held, mask)
        if self.pred == "holding_target" and not held and (cell[0] + dx, cell[1] + dy) == self.target_cell:
            yield Action.PICKUP, (cell, h, True, mask)

    def heuristic(self, node) -> int:
        cell, h, held, mask = node
        if self.pred == "visited_all_rooms":
            left = [rid for rid in self.rooms if not mask & self.room_bit[rid]]
            if not left:
                return 1
            far = max(min(abs(cell[0] - x) + abs(cell[1] - y) for x, y in self.room_cells[rid]) for rid in left)
            return max(far, len(left)) + 1
        if held:
            return 1
        tx, ty = self.target_cell
        nav = max(0, abs(cell[0] - tx) + abs(cell[1] - ty) - 1)
        return nav + (2 if self.pred == "holding_target" else 1)


def _search(house: HouseSpec, state: EnvState):
    prob = _Problem(house, state)
    if prob.target_cell is None and prob.pred != "visited_all_rooms":
        raise InfeasibleTaskError("target object is held by the agent or missing")
    DONE_NODE = ("done",)
    start = prob.start
    g = {start: 0}
    parent = {start: None}
    counter = 0
    heap = [(prob.heuristic(start), prob.heuristic(start), counter, start)]
    while heap:
        f, _, _, node = heapq.heappop(heap)
        if node == DONE_NODE:
            actions = []
            cur = node
            while parent[cur] is not None:
                prev, a = parent[cur]
                actions.append(a)
                cur = prev
            return g[node], actions[::-1]
        if f - prob.heuristic(node) > g[node]:
            continue  # stale entry
        gn = g[node]
        succ = list(prob.successors(node))
        if prob.satisfied(node):
            succ.append((Action.DONE, DONE_NODE))
        for a, nxt in succ:
            cost = gn + 1
            if cost < g.get(nxt, float("inf")):
                g[nxt] = cost
                parent[nxt] = (node, a)
                hn = 0 if nxt == DONE_NODE else prob.heuristic(nxt)
                counter += 1
                heapq.heappush(heap, (cost + hn, hn, counter, nxt))
    raise InfeasibleTaskError("goal unreachable from the start state")


def astar_min_steps(house: HouseSpec, state: EnvState) -> int:
    """Fewest actions (moves, turns, interactions and the final DONE) to succeed from ``state``."""
    return _search(house, state)[0]


def expert_trajectory(house: HouseSpec, state: EnvState) -> list:
    """An optimal action sequence from ``state``; ties are broken deterministically."""
    return _search(house, state)[1]
