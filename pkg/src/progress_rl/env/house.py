"""Procedural multi-room houses on a small grid.

Rooms come from recursive rectangular splits of the interior; doors are cut
along a random spanning tree of the room-adjacency graph, so the room graph is
always a tree and every room is reachable.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationError

WALL, FLOOR, DOOR = 0, 1, 2
_CELL_CHARS = {WALL: "#", FLOOR: ".", DOOR: "+"}

ROOM_KINDS = ("kitchen", "living_room", "bedroom", "bathroom", "hall", "office")
SIZE_CLASSES = ("small", "medium", "large")

# category -> (allowed size classes, affordances)
CATALOG = {
    "mug": (("small",), ("pickable", "drinkable-from")),
    "apple": (("small", "medium", "large"), ("pickable", "edible")),
    "laptop": (("medium",), ("pickable",)),
    "book": (("small", "medium"), ("pickable", "readable")),
    "clock": (("small", "medium"), ("pickable",)),
    "chair": (("medium",), ("sittable",)),
    "sofa": (("large",), ("sittable", "lie-on")),
    "bed": (("large",), ("lie-on",)),
    "plant": (("small", "medium", "large"), ()),
    "tv": (("large",), ("watchable",)),
}
CATEGORIES = tuple(CATALOG)
AFFORDANCES = ("pickable", "drinkable-from", "edible", "readable", "sittable", "lie-on", "watchable")


@dataclass(frozen=True)
class Room:
    room_id: str
    kind: str
    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, cell) -> bool:
        x, y = cell
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def cells(self):
        return [(x, y) for y in range(self.y0, self.y1 + 1) for x in range(self.x0, self.x1 + 1)]


@dataclass(frozen=True)
class Door:
    cell: tuple
    rooms: tuple  # (room_id_a, room_id_b), sorted


@dataclass(frozen=True)
class HouseObject:
    object_id: str
    category: str
    size_class: str
    affordances: tuple
    cell: tuple
    room_id: str

    @property
    def pickable(self) -> bool:
        return "pickable" in self.affordances


@dataclass(frozen=True)
class HouseParams:
    width: int = 9
    height: int = 9
    rooms_min: int = 1
    rooms_max: int = 3
    objects_min: int = 1
    objects_max: int = 2
    min_room_side: int = 2

    def validate(self):
        if self.rooms_min < 1 or self.rooms_max < self.rooms_min:
            raise GenerationError(f"bad room range {self.rooms_min}..{self.rooms_max}")
        if self.objects_min < 0 or self.objects_max < self.objects_min:
            raise GenerationError(f"bad object range {self.objects_min}..{self.objects_max}")
        if self.min_room_side < 1:
            raise GenerationError("min_room_side must be >= 1")
        if self.width - 2 < self.min_room_side or self.height - 2 < self.min_room_side:
            raise GenerationError(f"grid {self.width}x{self.height} cannot hold a single room")


@dataclass
class HouseSpec:
    width: int
    height: int
    grid: np.ndarray  # (height, width) of WALL/FLOOR/DOOR
    rooms: list
    doors: list
    objects: list
    seed: int
    params: HouseParams = field(default_factory=HouseParams)

    def __post_init__(self):
        self._room_of = np.full((self.height, self.width), -1, dtype=np.int32)
        for i, r in enumerate(self.rooms):
            self._room_of[r.y0:r.y1 + 1, r.x0:r.x1 + 1] = i

    # --- queries -------------------------------------------------------
    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def passable(self, cell) -> bool:
        return self.in_bounds(cell) and self.grid[cell[1], cell[0]] != WALL

    def room_at(self, cell):
        """Room containing ``cell`` or None (walls and doors belong to no room)."""
        if not self.in_bounds(cell):
            return None
        i = self._room_of[cell[1], cell[0]]
        return self.rooms[i] if i >= 0 else None

    def room(self, room_id) -> Room:
        for r in self.rooms:
            if r.room_id == room_id:
                return r
        raise KeyError(room_id)

    def obj(self, object_id) -> HouseObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def room_neighbors(self) -> dict:
        adj = {r.room_id: [] for r in self.rooms}
        for d in self.doors:
            a, b = d.rooms
            adj[a].append(b)
            adj[b].append(a)
        for k in adj:
            adj[k].sort()
        return adj

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "grid": ["".join(_CELL_CHARS[int(v)] for v in row) for row in self.grid],
            "rooms": [[r.room_id, r.kind, r.x0, r.y0, r.x1, r.y1] for r in self.rooms],
            "doors": [[list(d.cell), list(d.rooms)] for d in self.doors],
            "objects": [
                {"object_id": o.object_id, "category": o.category, "size_class": o.size_class,
                 "affordances": list(o.affordances), "cell": list(o.cell), "room_id": o.room_id}
                for o in self.objects
            ],
            "params": vars(self.params).copy(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HouseSpec":
        inv = {v: k for k, v in _CELL_CHARS.items()}
        grid = np.array([[inv[c] for c in row] for row in d["grid"]], dtype=np.int8)
        return cls(
            width=d["width"], height=d["height"], grid=grid,
            rooms=[Room(*r) for r in d["rooms"]],
            doors=[Door(tuple(c), tuple(rs)) for c, rs in d["doors"]],
            objects=[HouseObject(o["object_id"], o["category"], o["size_class"], tuple(o["affordances"]),
                                 tuple(o["cell"]), o["room_id"]) for o in d["objects"]],
            seed=d["seed"],
            params=HouseParams(**d.get("params", {})),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _split_rooms(rng, params: HouseParams, n_target: int) -> list:
    m = params.min_room_side
    rects = [(1, 1, params.width - 2, params.height - 2)]
    while len(rects) < n_target:
        def axes(r):
            x0, y0, x1, y1 = r
            out = []
            if x1 - x0 + 1 >= 2 * m + 1:
                out.append("x")
            if y1 - y0 + 1 >= 2 * m + 1:
                out.append("y")
            return out

        splittable = [r for r in rects if axes(r)]
        if not splittable:
            break
        areas = [(r[2] - r[0] + 1) * (r[3] - r[1] + 1) for r in splittable]
        best = [r for r, a in zip(splittable, areas) if a == max(areas)]
        r = best[int(rng.integers(len(best)))]
        x0, y0, x1, y1 = r
        ax = axes(r)
        axis = ax[int(rng.integers(len(ax)))] if len(ax) > 1 else ax[0]
        rects.remove(r)
        if axis == "x":
            c = int(rng.integers(x0 + m, x1 - m + 1))
            rects += [(x0, y0, c - 1, y1), (c + 1, y0, x1, y1)]
        else:
            c = int(rng.integers(y0 + m, y1 - m + 1))
            rects += [(x0, y0, x1, c - 1), (x0, c + 1, x1, y1)]
    rects.sort(key=lambda r: (r[1], r[0]))
    return rects


def generate_house(seed: int, params: HouseParams | None = None) -> HouseSpec:
    """Deterministically generate a house from ``seed``."""
    params = params or HouseParams()
    params.validate()
    rng = np.random.default_rng([int(seed), 0x5EED])
    n_target = int(rng.integers(params.rooms_min, params.rooms_max + 1))
    rects = _split_rooms(rng, params, n_target)
    if len(rects) < params.rooms_min:
        raise GenerationError(
            f"grid {params.width}x{params.height} fits only {len(rects)} rooms, need {params.rooms_min}")

    grid = np.full((params.height, params.width), WALL, dtype=np.int8)
    kinds = list(ROOM_KINDS)
    rooms = []
    for i, (x0, y0, x1, y1) in enumerate(rects):
        kind = kinds.pop(int(rng.integers(len(kinds)))) if kinds else ROOM_KINDS[int(rng.integers(len(ROOM_KINDS)))]
        rooms.append(Room(f"r{i}", kind, x0, y0, x1, y1))
        grid[y0:y1 + 1, x0:x1 + 1] = FLOOR

    def owner(cell):
        for r in rooms:
            if r.contains(cell):
                return r.room_id
        return None

    # candidate door cells: wall cells with floor of two different rooms on opposite sides
    candidates = {}
    for y in range(1, params.height - 1):
        for x in range(1, params.width - 1):
            if grid[y, x] != WALL:
                continue
            for a, b in (((x - 1, y), (x + 1, y)), ((x, y - 1), (x, y + 1))):
                ra, rb = owner(a), owner(b)
                if ra and rb and ra != rb:
                    candidates.setdefault(tuple(sorted((ra, rb))), []).append((x, y))
    pairs = sorted(candidates)
    order = rng.permutation(len(pairs))
    parent = {r.room_id: r.room_id for r in rooms}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    doors = []
    for idx in order:
        pair = pairs[idx]
        ra, rb = find(pair[0]), find(pair[1])
        if ra == rb:
            continue
        parent[ra] = rb
        cells = candidates[pair]
        cell = cells[int(rng.integers(len(cells)))]
        grid[cell[1], cell[0]] = DOOR
        doors.append(Door(cell, pair))
    if len({find(r.room_id) for r in rooms}) != 1:
        raise GenerationError("room adjacency graph is disconnected")
    doors.sort(key=lambda d: d.rooms)

    def near_door(cell):
        x, y = cell
        return any(grid[y + dy, x + dx] == DOOR for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)))

    objects = []
    used = set()
    for room in rooms:
        count = int(rng.integers(params.objects_min, params.objects_max + 1))
        free = [c for c in room.cells() if not near_door(c) and c not in used
                and any(room.contains((c[0] + dx, c[1] + dy)) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)))]
        for _ in range(min(count, len(free))):
            cell = free.pop(int(rng.integers(len(free))))
            used.add(cell)
            cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
            sizes, affs = CATALOG[cat]
            size = sizes[int(rng.integers(len(sizes)))]
            objects.append(HouseObject(f"o{len(objects)}", cat, size, affs, cell, room.room_id))

    return HouseSpec(params.width, params.height, grid, rooms, doors, objects, int(seed), params)


def generate_pool(params: HouseParams, first_seed: int, count: int, last_seed: int | None = None) -> list:
    """``count`` houses from consecutive seeds starting at ``first_seed``; infeasible seeds are skipped.

    ``last_seed`` (exclusive) bounds the seed range so train and test pools stay disjoint.
    """
    params.validate()
    houses = []
    seed = int(first_seed)
    limit = last_seed if last_seed is not None else first_seed + 100 * max(count, 1) + 100
    while len(houses) < count:
        if seed >= limit:
            raise GenerationError(f"seed range [{first_seed}, {limit}) yields fewer than {count} houses")
        try:
            houses.append(generate_house(seed, params))
        except GenerationError:
            pass
        seed += 1
    return houses


def render_ascii(house: HouseSpec, agent_cell=None, heading=None) -> str:
    """Text map: ``#`` wall, ``.`` floor, ``+`` door, first letter of object category, agent arrow."""
    rows = [[_CELL_CHARS[int(v)] for v in row] for row in house.grid]
    for o in house.objects:
        rows[o.cell[1]][o.cell[0]] = o.category[0]
    if agent_cell is not None:
        rows[agent_cell[1]][agent_cell[0]] = "^>v<"[heading or 0]
    return "\n".join("".join(r) for r in rows)
