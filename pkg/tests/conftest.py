from dataclasses import replace

import numpy as np
import pytest

from progress_rl.env import ChoresLiteEnv, HouseParams, generate_house
from progress_rl.env.house import DOOR, FLOOR, WALL, Door, HouseObject, HouseSpec, Room
from progress_rl.errors import ProgressRLError
from progress_rl.scenegraph import TASK_KINDS


def state_key(s):
    return (s.agent_cell, s.heading, s.held_object, s.visited_rooms, s.object_cells, s.success)


def bfs_neighbors(env):
    """Neighbour function over every action of the real transition function."""
    states = {}

    def register(s):
        k = state_key(s)
        states.setdefault(k, s)
        return k

    def neighbors(k):
        s = states[k]
        out = []
        for a in range(env.num_actions):
            nxt = env.transition(replace(s, step_count=0), a)
            if nxt.terminated:
                continue
            out.append(register(nxt))
        return out

    return register, neighbors


def random_instances(n, seed=0, max_side=9, kinds=TASK_KINDS):
    """Yield (env, state) for ``n`` feasible random instances on grids up to max_side."""
    rng = np.random.default_rng(seed)
    made = 0
    while made < n:
        s = int(rng.integers(1 << 30))
        w, h = int(rng.integers(5, max_side + 1)), int(rng.integers(5, max_side + 1))
        kind = kinds[made % len(kinds)]
        try:
            house = generate_house(s, HouseParams(width=w, height=h, rooms_min=1, rooms_max=3,
                                                  objects_min=0, objects_max=2))
            env = ChoresLiteEnv(house)
            state, _, _ = env.reset(kind, s)
        except ProgressRLError:
            continue
        made += 1
        yield env, state


def make_house(rows, rooms, objects=(), doors=()):
    """Hand-built house from an ASCII map (``#`` wall, ``.`` floor, ``+`` door)."""
    lut = {"#": WALL, ".": FLOOR, "+": DOOR}
    grid = np.array([[lut[c] for c in r] for r in rows], dtype=np.int8)
    return HouseSpec(len(rows[0]), len(rows), grid, [Room(*r) for r in rooms],
                     [Door(tuple(c), tuple(p)) for c, p in doors],
                     [HouseObject(*o) for o in objects], seed=0, params=HouseParams())


@pytest.fixture
def corridor_house():
    # one 5-cell corridor room with a mug at its east end
    return make_house(
        ["#######", "#.....#", "#######"],
        [("r0", "hall", 1, 1, 5, 1)],
        [("o0", "mug", "small", ("pickable", "drinkable-from"), (5, 1), "r0")],
    )


@pytest.fixture
def three_room_house():
    # bedroom (west) - hall (middle) - kitchen (east); mug in the kitchen
    return make_house(
        [
            "#############",
            "#...#...#...#",
            "#...+...+...#",
            "#...#...#...#",
            "#############",
        ],
        [("r0", "bedroom", 1, 1, 3, 3), ("r1", "hall", 5, 1, 7, 3), ("r2", "kitchen", 9, 1, 11, 3)],
        [("o0", "mug", "small", ("pickable", "drinkable-from"), (11, 2), "r2")],
        [((4, 2), ("r0", "r1")), ((8, 2), ("r1", "r2"))],
    )


# --- acceptance verdicts --------------------------------------------------------
VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL/WARN line for an acceptance criterion and print it."""
    store = request.config.stash.setdefault(VERDICTS, {})

    def record(n, status, detail):
        line = f"criterion {n:>2}: {status:<4} {detail}"
        store[n] = line
        print(line)
        return status == "PASS" or status == "WARN"

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
