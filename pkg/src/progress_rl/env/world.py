"""Gridworld dynamics, tasks and egocentric observations."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractViolationError, InvalidInputError, PlanningError, TaskAssignmentError
from ..scenegraph import SceneGraph, TaskInstruction, TaskKind, TASK_KINDS, resolve_target
from .house import AFFORDANCES, CATEGORIES, DOOR, SIZE_CLASSES, WALL, HouseSpec

# N, E, S, W as (dx, dy); y grows downwards
DIRS = ((0, -1), (1, 0), (0, 1), (-1, 0))
HEADING_NAMES = "NESW"
MAX_ACTIONS = 20


class Action(enum.IntEnum):
    MOVE_FWD = 0
    MOVE_BACK = 1
    ROTATE_L = 2
    ROTATE_R = 3
    ROTATE_L_SMALL = 4
    ROTATE_R_SMALL = 5
    PICKUP = 6
    DROPOFF = 7
    SUB_DONE = 8
    DONE = 9


BASE_ACTIONS = len(Action)

SUCCESS_PREDICATES = {
    TaskKind.FETCH: "holding_target",
    TaskKind.PICKUP: "holding_target",
    TaskKind.OBJNAV: "facing_target",
    TaskKind.OBJNAV_REL: "facing_target",
    TaskKind.OBJNAV_AFF: "facing_target",
    TaskKind.ROOMVISIT: "visited_all_rooms",
}


@dataclass(frozen=True)
class EnvConfig:
    num_actions: int = BASE_ACTIONS
    view_radius: int = 3
    max_steps_factor: int = 16
    max_steps_cap: int = 600
    rooms_required: int = 2

    def __post_init__(self):
        if not BASE_ACTIONS <= self.num_actions <= MAX_ACTIONS:
            raise InvalidInputError(f"num_actions must lie in [{BASE_ACTIONS}, {MAX_ACTIONS}]")
        if self.view_radius < 1:
            raise InvalidInputError("view_radius must be >= 1")


def obs_dim_for(config: EnvConfig) -> int:
    R = config.view_radius
    return (2 * R + 1) ** 2 * 6 + len(TASK_KINDS) + len(CATEGORIES) + len(AFFORDANCES) + 2 + 2


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    target_ids: tuple
    max_steps: int
    success_predicate: str


@dataclass(frozen=True)
class EnvState:
    agent_cell: tuple
    heading: int
    held_object: str | None
    visited_rooms: frozenset
    step_count: int
    object_cells: tuple  # current cell per house object (None while held)
    task: TaskSpec = field(compare=False)
    success: bool = False
    terminated: bool = False

    @property
    def done(self) -> bool:
        return self.success or self.terminated

    def front_cell(self):
        dx, dy = DIRS[self.heading]
        return (self.agent_cell[0] + dx, self.agent_cell[1] + dy)


def _bresenham(a, b):
    (x0, y0), (x1, y1) = a, b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    cells = []
    while (x0, y0) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
        cells.append((x0, y0))
    return cells[:-1]


class ChoresLiteEnv:
    """One house, one episode at a time. Not thread-safe; give each worker its own instance."""

    def __init__(self, house: HouseSpec, config: EnvConfig | None = None):
        self.house = house
        self.config = config or EnvConfig()
        self.state: EnvState | None = None
        self.instruction: TaskInstruction | None = None
        self.t_min: int | None = None
        self._los_cache = {}
        self._obj_index = {o.object_id: i for i, o in enumerate(house.objects)}
        R = self.config.view_radius
        self._walls = np.pad((house.grid == WALL).astype(float), R, constant_values=1.0)
        self._doors = np.pad((house.grid == DOOR).astype(float), R, constant_values=0.0)
        self._room_idx = np.pad(house._room_of, R, constant_values=-1)
        # patch coordinates for each heading; row 0 is farthest ahead
        ii, jj = np.meshgrid(np.arange(2 * R + 1), np.arange(2 * R + 1), indexing="ij")
        self._patch = []
        for h in range(4):
            fx, fy = DIRS[h]
            rx, ry = DIRS[(h + 1) % 4]
            ox = (R - ii) * fx + (jj - R) * rx
            oy = (R - ii) * fy + (jj - R) * ry
            self._patch.append((ox, oy))

    # --- task setup ------------------------------------------------------
    @property
    def num_actions(self) -> int:
        return self.config.num_actions

    @property
    def obs_dim(self) -> int:
        return obs_dim_for(self.config)

    def scene_graph(self, state: EnvState | None = None) -> SceneGraph:
        h = self.house
        graph = SceneGraph(
            rooms=[{"room_id": r.room_id, "room_kind": r.kind, "extent": [r.x0, r.y0, r.x1, r.y1]} for r in h.rooms],
            objects=[{"object_id": o.object_id, "category": o.category, "size_class": o.size_class,
                      "affordances": list(o.affordances), "containing_room": o.room_id, "cell": list(o.cell)}
                     for o in h.objects],
            adjacency=[{"rooms": list(d.rooms), "door": list(d.cell)} for d in h.doors],
        )
        if state is not None:
            room = h.room_at(state.agent_cell)
            graph.agent = {"room": room.room_id if room else None, "cell": list(state.agent_cell),
                           "heading": state.heading}
        return graph

    def _choose_instruction(self, kind: TaskKind, rng) -> TaskInstruction:
        objs = self.house.objects
        counts = {}
        for o in objs:
            counts[o.category] = counts.get(o.category, 0) + 1
        unique = sorted(c for c, n in counts.items() if n == 1)
        if kind is TaskKind.ROOMVISIT:
            need = self.config.rooms_required
            if len(self.house.rooms) < need:
                raise TaskAssignmentError(f"roomvisit needs >= {need} rooms, house has {len(self.house.rooms)}")
            return TaskInstruction(kind, {"room_count": len(self.house.rooms)})
        if kind in (TaskKind.FETCH, TaskKind.PICKUP):
            cats = [c for c in unique if any(o.category == c and o.pickable for o in objs)]
            if not cats:
                raise TaskAssignmentError(f"{kind.value} needs a uniquely identifiable pickable object")
            return TaskInstruction(kind, {"category": cats[int(rng.integers(len(cats)))]})
        if kind is TaskKind.OBJNAV:
            if not unique:
                raise TaskAssignmentError("objnav needs a uniquely identifiable object")
            return TaskInstruction(kind, {"category": unique[int(rng.integers(len(unique)))]})
        if kind is TaskKind.OBJNAV_REL:
            if not counts:
                raise TaskAssignmentError("objnav_rel needs at least one object")
            multi = sorted(c for c, n in counts.items() if n > 1)
            pool = multi or sorted(counts)
            cat = pool[int(rng.integers(len(pool)))]
            attr = ("largest", "smallest")[int(rng.integers(2))]
            return TaskInstruction(kind, {"category": cat, "attribute": attr})
        carriers = {}
        for o in objs:
            for a in o.affordances:
                carriers[a] = carriers.get(a, 0) + 1
        affs = sorted(a for a, n in carriers.items() if n == 1)
        if not affs:
            raise TaskAssignmentError("objnav_aff needs an affordance carried by exactly one object")
        return TaskInstruction(kind, {"affordance": affs[int(rng.integers(len(affs)))]})

    def reset(self, task_kind, seed: int, instruction: TaskInstruction | None = None):
        """Start an episode; returns (state, instruction, scene graph)."""
        from .planning import astar_min_steps

        kind = TaskKind(task_kind)
        rng = np.random.default_rng([int(seed), int(self.house.seed), TASK_KINDS.index(kind)])
        instr = instruction or self._choose_instruction(kind, rng)
        if instr.kind is not kind:
            raise TaskAssignmentError("instruction kind does not match task kind")
        graph = self.scene_graph()
        if kind is TaskKind.ROOMVISIT:
            if len(self.house.rooms) < self.config.rooms_required:
                raise TaskAssignmentError(
                    f"roomvisit needs >= {self.config.rooms_required} rooms, house has {len(self.house.rooms)}")
            targets = tuple(r.room_id for r in self.house.rooms)
        else:
            try:
                target, _ = resolve_target(graph, instr)
            except PlanningError as exc:
                raise TaskAssignmentError(str(exc)) from None
            targets = (target["object_id"],)

        occupied = {o.cell for o in self.house.objects}
        if kind is TaskKind.PICKUP:
            tobj = self.house.obj(targets[0])
            room = self.house.room(tobj.room_id)
            starts = [c for c in room.cells() if c not in occupied and self._visible_from(c, tobj.cell)]
        else:
            starts = [c for r in self.house.rooms for c in r.cells() if c not in occupied]
        if not starts:
            raise TaskAssignmentError(f"no valid start cell for {kind.value}")
        cell = starts[int(rng.integers(len(starts)))]
        heading = int(rng.integers(4))
        provisional = TaskSpec(kind, targets, self.config.max_steps_cap, SUCCESS_PREDICATES[kind])
        state = EnvState(cell, heading, None, frozenset({self.house.room_at(cell).room_id}), 0,
                         tuple(o.cell for o in self.house.objects), provisional)
        t_min = astar_min_steps(self.house, state)
        max_steps = max(t_min, min(self.config.max_steps_factor * t_min, self.config.max_steps_cap))
        task = replace(provisional, max_steps=max_steps)
        self.state = replace(state, task=task)
        self.instruction = instr
        self.t_min = t_min
        return self.state, instr, self.scene_graph(self.state)

    # --- dynamics --------------------------------------------------------
    def object_cell(self, state: EnvState, object_id):
        return state.object_cells[self._obj_index[object_id]]

    def _object_at(self, state: EnvState, cell):
        for i, c in enumerate(state.object_cells):
            if c == cell:
                return self.house.objects[i]
        return None

    def is_success(self, state: EnvState) -> bool:
        pred = state.task.success_predicate
        if pred == "visited_all_rooms":
            return len(state.visited_rooms) == len(self.house.rooms)
        target = state.task.target_ids[0]
        if pred == "holding_target":
            return state.held_object == target
        cell = self.object_cell(state, target)
        return cell is not None and cell == state.front_cell()

    def transition(self, state: EnvState, action) -> EnvState:
        """Pure successor function; raises on a finished episode."""
        if state.done:
            raise ContractViolationError("episode already finished; call reset()")
        a = int(action)
        if not 0 <= a < self.config.num_actions:
            raise InvalidInputError(f"action {a} outside action space of size {self.config.num_actions}")
        cell, heading, held = state.agent_cell, state.heading, state.held_object
        objects = state.object_cells
        visited = state.visited_rooms
        success = terminated = False
        dx, dy = DIRS[heading]
        if a == Action.MOVE_FWD or a == Action.MOVE_BACK:
            sgn = 1 if a == Action.MOVE_FWD else -1
            nxt = (cell[0] + sgn * dx, cell[1] + sgn * dy)
            if self.house.passable(nxt):
                cell = nxt
                room = self.house.room_at(cell)
                if room is not None and room.room_id not in visited:
                    visited = visited | {room.room_id}
        elif a == Action.ROTATE_L:
            heading = (heading + 3) % 4
        elif a == Action.ROTATE_R:
            heading = (heading + 1) % 4
        elif a == Action.PICKUP:
            obj = self._object_at(state, state.front_cell())
            if held is None and obj is not None and obj.pickable:
                held = obj.object_id
                objects = tuple(None if o.object_id == held else c for o, c in zip(self.house.objects, objects))
        elif a == Action.DROPOFF:
            front = state.front_cell()
            if held is not None and self.house.passable(front) and self._object_at(state, front) is None:
                objects = tuple(front if o.object_id == held else c for o, c in zip(self.house.objects, objects))
                held = None
        elif a == Action.DONE:
            success = self.is_success(state)
            terminated = not success
        steps = state.step_count + 1
        if not (success or terminated) and steps >= state.task.max_steps:
            terminated = True
        return EnvState(cell, heading, held, visited, steps, objects, state.task, success, terminated)

    def step(self, action):
        """Advance the current episode: returns (state, observation, r_task, done)."""
        if self.state is None:
            raise ContractViolationError("step() before reset()")
        nxt = self.transition(self.state, action)
        r_task = 1 if nxt.success else 0
        self.state = nxt
        return nxt, self.observe(nxt), r_task, nxt.done

    # --- perception ------------------------------------------------------
    def _los(self, a, b) -> bool:
        key = (a, b)
        hit = self._los_cache.get(key)
        if hit is None:
            hit = all(self.house.grid[y, x] != WALL for x, y in _bresenham(a, b))
            self._los_cache[key] = hit
        return hit

    def _visible_from(self, cell, target_cell) -> bool:
        R = self.config.view_radius
        if max(abs(cell[0] - target_cell[0]), abs(cell[1] - target_cell[1])) > R:
            return False
        return self._los(cell, target_cell)

    def visible(self, state: EnvState, object_id) -> bool:
        if state.held_object == object_id:
            return True
        c = self.object_cell(state, object_id)
        return c is not None and self._visible_from(state.agent_cell, c)

    def _matches(self, obj) -> bool:
        pay = self.instruction.payload
        if self.instruction.kind is TaskKind.ROOMVISIT:
            return False
        if self.instruction.kind is TaskKind.OBJNAV_AFF:
            return pay["affordance"] in obj.affordances
        return obj.category == pay["category"]

    def observe(self, state: EnvState) -> np.ndarray:
        """Egocentric patch (wall, door, match, match size, other object, visited room) + task encoding."""
        R = self.config.view_radius
        ox, oy = self._patch[state.heading]
        ax, ay = state.agent_cell
        px, py = ax + R + ox, ay + R + oy
        side = 2 * R + 1
        obj_match = np.zeros((side, side))
        obj_size = np.zeros((side, side))
        obj_other = np.zeros((side, side))
        for o, c in zip(self.house.objects, state.object_cells):
            if c is None or not self._visible_from(state.agent_cell, c):
                continue
            wx, wy = c[0] - ax, c[1] - ay
            fx, fy = DIRS[state.heading]
            rx, ry = DIRS[(state.heading + 1) % 4]
            i, j = R - (wx * fx + wy * fy), R + (wx * rx + wy * ry)
            if self._matches(o):
                obj_match[i, j] = 1.0
                obj_size[i, j] = (SIZE_CLASSES.index(o.size_class) + 1) / len(SIZE_CLASSES)
            else:
                obj_other[i, j] = 1.0
        room_idx = self._room_idx[py, px]
        visited_ids = [k for k, r in enumerate(self.house.rooms) if r.room_id in state.visited_rooms]
        visited = np.isin(room_idx, visited_ids).astype(float)
        instr = self.instruction
        task_vec = np.zeros(len(TASK_KINDS) + len(CATEGORIES) + len(AFFORDANCES) + 2)
        task_vec[TASK_KINDS.index(instr.kind)] = 1.0
        base = len(TASK_KINDS)
        if "category" in instr.payload:
            task_vec[base + CATEGORIES.index(instr.payload["category"])] = 1.0
        base += len(CATEGORIES)
        if "affordance" in instr.payload:
            task_vec[base + AFFORDANCES.index(instr.payload["affordance"])] = 1.0
        base += len(AFFORDANCES)
        if "attribute" in instr.payload:
            task_vec[base + ("largest", "smallest").index(instr.payload["attribute"])] = 1.0
        held = 0.0 if state.held_object is None else 1.0
        frac = state.step_count / state.task.max_steps
        return np.concatenate([
            self._walls[py, px].ravel(), self._doors[py, px].ravel(), obj_match.ravel(), obj_size.ravel(),
            obj_other.ravel(), visited.ravel(), task_vec, [held, frac],
        ])
