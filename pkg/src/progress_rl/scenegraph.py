"""Scene graphs, structured task instructions and ordered subgoal plans.

The oracle decomposer turns (scene graph, instruction) into verifiable
waypoints drawn from a closed taxonomy: ``enter`` a room, ``sight`` an object,
``approach`` it, ``grasp`` it. The external port asks a remote service for the
same plan over JSON and validates the answer against the graph.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .errors import PlanningError, ProtocolError
from .service import CallTelemetry, ServiceEndpoint, post_json

PREDICATES = ("enter", "sight", "approach", "grasp")
SIZE_RANK = {"small": 0, "medium": 1, "large": 2}
PROMPT_TEMPLATE_VERSION = "subgoals-v1"


class TaskKind(str, enum.Enum):
    FETCH = "fetch"
    PICKUP = "pickup"
    OBJNAV = "objnav"
    ROOMVISIT = "roomvisit"
    OBJNAV_REL = "objnav_rel"
    OBJNAV_AFF = "objnav_aff"


TASK_KINDS = tuple(TaskKind)

_PAYLOAD_KEYS = {
    TaskKind.FETCH: {"category"},
    TaskKind.PICKUP: {"category"},
    TaskKind.OBJNAV: {"category"},
    TaskKind.ROOMVISIT: {"room_count"},
    TaskKind.OBJNAV_REL: {"category", "attribute"},
    TaskKind.OBJNAV_AFF: {"affordance"},
}


@dataclass(frozen=True)
class TaskInstruction:
    kind: TaskKind
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        missing = _PAYLOAD_KEYS[self.kind] - set(self.payload)
        if missing:
            raise PlanningError(f"{self.kind.value} instruction missing payload keys {sorted(missing)}")
        if self.kind is TaskKind.OBJNAV_REL and self.payload["attribute"] not in ("largest", "smallest"):
            raise PlanningError(f"unknown relative attribute {self.payload['attribute']!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "payload": dict(self.payload)}

    @classmethod
    def from_dict(cls, d) -> "TaskInstruction":
        return cls(TaskKind(d["kind"]), dict(d["payload"]))


@dataclass
class SceneGraph:
    """Global description of a house: rooms, objects, door-annotated adjacency, agent pose."""

    rooms: list  # [{"room_id", "room_kind", "extent": [x0, y0, x1, y1]}]
    objects: list  # [{"object_id", "category", "size_class", "affordances", "containing_room", "cell"}]
    adjacency: list  # [{"rooms": [a, b], "door": [x, y]}]
    agent: dict | None = None  # {"room": id, "cell": [x, y], "heading": int}

    def __post_init__(self):
        ids = {r["room_id"] for r in self.rooms}
        for o in self.objects:
            if o["containing_room"] not in ids:
                raise PlanningError(f"object {o['object_id']} sits in unknown room {o['containing_room']}")
        if self.rooms:
            start = self.rooms[0]["room_id"]
            seen = set(_room_bfs(self, start))
            if seen != ids:
                raise PlanningError(f"rooms {sorted(ids - seen)} unreachable in adjacency graph")

    def room_ids(self):
        return [r["room_id"] for r in self.rooms]

    def object_by_id(self, oid):
        for o in self.objects:
            if o["object_id"] == oid:
                return o
        return None

    def neighbors(self) -> dict:
        adj = {r: [] for r in self.room_ids()}
        for e in self.adjacency:
            a, b = e["rooms"]
            adj[a].append(b)
            adj[b].append(a)
        return {k: sorted(v, key=_id_key) for k, v in adj.items()}

    def to_dict(self) -> dict:
        return {"rooms": self.rooms, "objects": self.objects, "adjacency": self.adjacency, "agent": self.agent}

    @classmethod
    def from_dict(cls, d) -> "SceneGraph":
        return cls(d["rooms"], d["objects"], d["adjacency"], d.get("agent"))


@dataclass(frozen=True)
class Subgoal:
    index: int
    description: str
    predicate: str
    target: str


@dataclass(frozen=True)
class SubgoalPlan:
    subgoals: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return len(self.subgoals)

    def to_wire(self) -> dict:
        return {"subgoals": [{"index": g.index, "description": g.description,
                              "predicate": g.predicate, "target": g.target} for g in self.subgoals]}

    @classmethod
    def from_wire(cls, d) -> "SubgoalPlan":
        return cls(tuple(Subgoal(int(g["index"]), str(g["description"]), str(g["predicate"]), str(g["target"]))
                         for g in d["subgoals"]))


@dataclass(frozen=True)
class Violation:
    index: int
    kind: str
    message: str


def _id_key(s):
    """Natural order for ids like ``o2`` < ``o10``."""
    head = s.rstrip("0123456789")
    tail = s[len(head):]
    return (head, int(tail) if tail else -1, s)


def _room_bfs(graph: SceneGraph, start) -> dict:
    adj = graph.neighbors()
    dist = {start: 0}
    q = deque([start])
    while q:
        r = q.popleft()
        for n in adj[r]:
            if n not in dist:
                dist[n] = dist[r] + 1
                q.append(n)
    return dist


def room_path(graph: SceneGraph, start, goal) -> list:
    """Shortest room sequence from ``start`` to ``goal`` (both included)."""
    adj = graph.neighbors()
    parent = {start: None}
    q = deque([start])
    while q:
        r = q.popleft()
        if r == goal:
            break
        for n in adj[r]:
            if n not in parent:
                parent[n] = r
                q.append(n)
    if goal not in parent:
        raise PlanningError(f"room {goal} unreachable from {start}")
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def resolve_target(graph: SceneGraph, instr: TaskInstruction):
    """Pick the target object for an instruction; returns (object dict, notes)."""
    kind, pay = instr.kind, instr.payload
    notes = {}
    if kind is TaskKind.OBJNAV_AFF:
        cands = [o for o in graph.objects if pay["affordance"] in o["affordances"]]
        missing = f"object with affordance {pay['affordance']!r}"
    else:
        cands = [o for o in graph.objects if o["category"] == pay["category"]]
        missing = f"object of category {pay['category']!r}"
        if kind in (TaskKind.FETCH, TaskKind.PICKUP):
            cands = [o for o in cands if "pickable" in o["affordances"]]
            missing = f"pickable {missing}"
    if not cands:
        raise PlanningError(f"no {missing} in scene graph")
    if kind is TaskKind.OBJNAV_REL:
        sign = 1 if pay["attribute"] == "largest" else -1
        best = max(sign * SIZE_RANK[o["size_class"]] for o in cands)
        cands = [o for o in cands if sign * SIZE_RANK[o["size_class"]] == best]
    cands = sorted(cands, key=lambda o: _id_key(o["object_id"]))
    if len(cands) > 1:
        notes["tie_break"] = {"rule": "lowest object_id", "candidates": [o["object_id"] for o in cands]}
    return cands[0], notes


def _start_room(graph: SceneGraph, fallback):
    if graph.agent and graph.agent.get("room"):
        return graph.agent["room"]
    return fallback


def decompose_oracle(graph: SceneGraph, instr: TaskInstruction) -> SubgoalPlan:
    """Deterministic planner standing in for a language-model decomposer."""
    steps = []
    meta = {"planner": "oracle"}
    if instr.kind is TaskKind.ROOMVISIT:
        current = _start_room(graph, graph.rooms[0]["room_id"])
        todo = set(graph.room_ids())
        while todo:
            dist = _room_bfs(graph, current)
            current = min(todo, key=lambda r: (dist[r], _id_key(r)))
            todo.remove(current)
            steps.append(("enter", current, f"enter room {current}"))
    else:
        target, notes = resolve_target(graph, instr)
        meta.update(notes)
        oid, cat, room = target["object_id"], target["category"], target["containing_room"]
        meta["target"] = oid
        start = _start_room(graph, room)
        for r in room_path(graph, start, room)[1:]:
            steps.append(("enter", r, f"enter room {r}"))
        steps.append(("sight", oid, f"bring the {cat} ({oid}) into view"))
        steps.append(("approach", oid, f"stand facing the {cat} ({oid}) within reach"))
        if instr.kind in (TaskKind.FETCH, TaskKind.PICKUP):
            steps.append(("grasp", oid, f"pick up the {cat} ({oid})"))
    subgoals = tuple(Subgoal(i + 1, desc, pred, tgt) for i, (pred, tgt, desc) in enumerate(steps))
    return SubgoalPlan(subgoals, meta)


def validate_plan(plan: SubgoalPlan, graph: SceneGraph) -> list:
    """List every invariant violation; an empty list means the plan is usable."""
    out = []
    if not plan.subgoals:
        out.append(Violation(0, "empty", "plan has no subgoals"))
        return out
    indices = [g.index for g in plan.subgoals]
    expected = list(range(1, len(indices) + 1))
    if indices != expected:
        present = set(indices)
        for k in range(1, max(max(indices), len(indices)) + 1):
            if k not in present:
                out.append(Violation(k, "contiguity", f"subgoal index {k} missing"))
        seen = set()
        for k in indices:
            if k in seen:
                out.append(Violation(k, "contiguity", f"subgoal index {k} repeated"))
            seen.add(k)
        if not out:
            out.append(Violation(indices[0], "contiguity", f"indices out of order: {indices}"))
    rooms = set(graph.room_ids())
    for g in plan.subgoals:
        if g.predicate not in PREDICATES:
            out.append(Violation(g.index, "predicate", f"unknown predicate {g.predicate!r}"))
        elif g.predicate == "enter":
            if g.target not in rooms:
                out.append(Violation(g.index, "resolution", f"room {g.target!r} not in scene graph"))
        else:
            obj = graph.object_by_id(g.target)
            if obj is None:
                out.append(Violation(g.index, "resolution", f"object {g.target!r} not in scene graph"))
            elif g.predicate == "grasp" and "pickable" not in obj["affordances"]:
                out.append(Violation(g.index, "predicate", f"object {g.target!r} cannot be grasped"))
    return out


def decompose_external(endpoint: ServiceEndpoint, graph: SceneGraph, instr: TaskInstruction, *,
                       prompt_template: str = "", transport=None, sleep=None,
                       telemetry: CallTelemetry | None = None) -> SubgoalPlan:
    """Ask a remote decomposer for a plan and validate it before returning."""
    payload = {
        "scene_graph": graph.to_dict(),
        "instruction": instr.to_dict(),
        "prompt_template_version": PROMPT_TEMPLATE_VERSION,
        "prompt_template": prompt_template,
    }
    kwargs = {"transport": transport, "telemetry": telemetry}
    if sleep is not None:
        kwargs["sleep"] = sleep
    body = post_json(endpoint, payload, **kwargs)
    try:
        plan = SubgoalPlan.from_wire(body)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed plan response: {exc!r}", raw=body) from None
    problems = validate_plan(plan, graph)
    if problems:
        raise ProtocolError("invalid plan: " + "; ".join(f"#{v.index} {v.message}" for v in problems), raw=body)
    return SubgoalPlan(plan.subgoals, {"planner": "external", "url": endpoint.url})
