from dataclasses import replace

import numpy as np
import pytest

from progress_rl.env import (
    Action, ChoresLiteEnv, EnvConfig, HouseParams, SubgoalTracker, astar_min_steps, expert_trajectory,
    generate_house, render_ascii,
)
from progress_rl.env.house import FLOOR, HouseSpec
from progress_rl.errors import (
    ContractViolationError, GenerationError, InfeasibleTaskError, TaskAssignmentError,
)
from progress_rl.scenegraph import TaskInstruction, TaskKind, decompose_oracle

from conftest import bfs_neighbors, make_house, random_instances
from oracles import bfs_shortest


# --- generation ------------------------------------------------------------

def test_generation_deterministic():
    p = HouseParams(rooms_min=3, rooms_max=3)
    assert generate_house(7, p).to_dict() == generate_house(7, p).to_dict()


def test_generation_differs_across_seeds():
    p = HouseParams(rooms_min=2, rooms_max=3)
    differ = sum(generate_house(s, p).digest() != generate_house(s + 1, p).digest() for s in range(100))
    assert differ == 100


def _reachable(house, start):
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack.pop()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (x + dx, y + dy)
            if house.passable(n) and n not in seen:
                seen.add(n)
                stack.append(n)
    return seen


@pytest.mark.parametrize("seed", range(40))
def test_house_invariants(seed):
    house = generate_house(seed, HouseParams(width=11, height=9, rooms_min=1, rooms_max=4))
    owned = {}
    for r in house.rooms:
        for c in r.cells():
            assert c not in owned, "rooms overlap"
            owned[c] = r.room_id
    floor = {(x, y) for y in range(house.height) for x in range(house.width) if house.grid[y, x] == FLOOR}
    assert floor == set(owned)
    reach = _reachable(house, house.rooms[0].cells()[0])
    assert all(c in reach for c in floor)
    for o in house.objects:
        assert house.grid[o.cell[1], o.cell[0]] == FLOOR
        assert house.room_at(o.cell).room_id == o.room_id
    assert len(house.doors) == len(house.rooms) - 1  # spanning tree


def test_roundtrip_serialization():
    h = generate_house(3, HouseParams(rooms_max=3))
    again = HouseSpec.from_dict(h.to_dict())
    assert again.to_dict() == h.to_dict()


@pytest.mark.parametrize("params", [
    HouseParams(width=4, height=4, min_room_side=3),
    HouseParams(rooms_min=3, rooms_max=2),
    HouseParams(width=6, height=6, rooms_min=5, rooms_max=5),
])
def test_infeasible_params(params):
    with pytest.raises(GenerationError):
        generate_house(1, params)


def test_render_ascii():
    h = generate_house(7, HouseParams(rooms_min=2, rooms_max=2))
    text = render_ascii(h, h.rooms[0].cells()[0], 1)
    assert len(text.splitlines()) == h.height and ">" in text


# --- reset -------------------------------------------------------------------

def test_empty_house_cannot_host_pickup():
    h = generate_house(5, HouseParams(rooms_min=1, rooms_max=1, objects_min=0, objects_max=0))
    with pytest.raises(TaskAssignmentError):
        ChoresLiteEnv(h).reset(TaskKind.PICKUP, 0)


def test_roomvisit_needs_two_rooms(corridor_house):
    with pytest.raises(TaskAssignmentError):
        ChoresLiteEnv(corridor_house).reset(TaskKind.ROOMVISIT, 0)


def test_fetch_payload_names_mug(three_room_house):
    _, instr, graph = ChoresLiteEnv(three_room_house).reset(TaskKind.FETCH, 0)
    assert instr.payload["category"] == "mug"
    assert graph.agent is not None


def test_relative_attribute_resolves_largest():
    h = make_house(
        ["#######", "#.....#", "#.....#", "#######"],
        [("r0", "kitchen", 1, 1, 5, 2)],
        [("o0", "apple", "small", ("pickable", "edible"), (2, 1), "r0"),
         ("o1", "apple", "large", ("pickable", "edible"), (4, 1), "r0")],
    )
    env = ChoresLiteEnv(h)
    state, instr, _ = env.reset(TaskKind.OBJNAV_REL, 0,
                                TaskInstruction(TaskKind.OBJNAV_REL, {"category": "apple", "attribute": "largest"}))
    assert state.task.target_ids == ("o1",)


def test_max_steps_rule(three_room_house):
    env = ChoresLiteEnv(three_room_house)
    state, _, _ = env.reset(TaskKind.FETCH, 1)
    assert state.task.max_steps == min(16 * env.t_min, 600)


# --- step ----------------------------------------------------------------------

def _env_at(house, cell, heading, kind=TaskKind.PICKUP, instr=None):
    env = ChoresLiteEnv(house)
    state, _, _ = env.reset(kind, 0, instr)
    env.state = replace(state, agent_cell=cell, heading=heading,
                        visited_rooms=frozenset({house.room_at(cell).room_id}))
    return env


def test_move_into_wall_blocked(corridor_house):
    env = _env_at(corridor_house, (1, 1), 0)  # facing north wall
    state, _, r, done = env.step(Action.MOVE_FWD)
    assert state.agent_cell == (1, 1) and state.step_count == 1 and r == 0 and not done


def test_pickup_and_done(corridor_house):
    env = _env_at(corridor_house, (4, 1), 1)
    state, _, r, done = env.step(Action.PICKUP)
    assert state.held_object == "o0" and r == 0 and not done
    state, _, r, done = env.step(Action.DONE)
    assert r == 1 and done and state.success


def test_stepping_finished_episode_raises(corridor_house):
    env = _env_at(corridor_house, (4, 1), 1)
    env.step(Action.DONE)
    with pytest.raises(ContractViolationError):
        env.step(Action.MOVE_FWD)


def test_step_limit_terminates(corridor_house):
    env = _env_at(corridor_house, (1, 1), 0)
    rewards = []
    done = False
    while not done:
        _, _, r, done = env.step(Action.ROTATE_L)
        rewards.append(r)
    assert env.state.terminated and not env.state.success
    assert env.state.step_count == env.state.task.max_steps and sum(rewards) == 0


def test_dropoff_places_object(corridor_house):
    env = _env_at(corridor_house, (4, 1), 1)
    env.step(Action.PICKUP)
    env.step(Action.ROTATE_R)
    env.step(Action.ROTATE_R)
    state, *_ = env.step(Action.DROPOFF)
    assert state.held_object is None and env.object_cell(state, "o0") == (3, 1)


def test_reward_at_most_once_and_only_when_done():
    for env, state in random_instances(30, seed=11):
        rng = np.random.default_rng(0)
        total = 0
        done = False
        while not done:
            _, _, r, done = env.step(int(rng.integers(env.num_actions)))
            assert r == 0 or done
            total += r
        assert total <= 1


def test_determinism_of_transitions():
    for env, state in random_instances(10, seed=5):
        actions = np.random.default_rng(1).integers(env.num_actions, size=40)
        def run():
            s = state
            trail = []
            for a in actions:
                if s.done:
                    break
                s = env.transition(s, int(a))
                trail.append(s)
            return trail
        assert run() == run()


def test_observation_shape_and_extended_actions(three_room_house):
    env = ChoresLiteEnv(three_room_house, EnvConfig(num_actions=20, view_radius=2))
    state, _, _ = env.reset(TaskKind.OBJNAV, 0)
    obs = env.observe(state)
    assert obs.shape == (env.obs_dim,)
    nxt = env.transition(state, 17)  # padding no-op
    assert nxt.agent_cell == state.agent_cell and nxt.heading == state.heading


def test_observation_rotates_with_heading(corridor_house):
    env = _env_at(corridor_house, (3, 1), 1, kind=TaskKind.OBJNAV,
                  instr=TaskInstruction(TaskKind.OBJNAV, {"category": "mug"}))
    R = env.config.view_radius
    side = 2 * R + 1
    match = lambda s: env.observe(s)[2 * side * side: 3 * side * side].reshape(side, side)
    east = match(env.state)
    assert east[R - 2, R] == 1.0  # mug two cells straight ahead
    west = match(replace(env.state, heading=3))
    assert west[R + 2, R] == 1.0  # now two cells behind


# --- A* oracle ----------------------------------------------------------------

def test_tmin_adjacent_pickup(corridor_house):
    env = _env_at(corridor_house, (4, 1), 1)
    assert astar_min_steps(corridor_house, env.state) == 2
    register, neighbors = bfs_neighbors(env)
    cost, _ = bfs_shortest(register(env.state), neighbors, lambda k: k[-1])
    assert cost == 2


def test_tmin_corridor_objnav_matches_bfs(corridor_house):
    env = _env_at(corridor_house, (1, 1), 1, kind=TaskKind.OBJNAV,
                  instr=TaskInstruction(TaskKind.OBJNAV, {"category": "mug"}))
    register, neighbors = bfs_neighbors(env)
    cost, _ = bfs_shortest(register(env.state), neighbors, lambda k: k[-1])
    assert astar_min_steps(corridor_house, env.state) == cost == 4


def test_unreachable_target_is_infeasible():
    h = make_house(
        ["#######", "#..#..#", "#######"],
        [("r0", "hall", 1, 1, 2, 1), ("r1", "closet", 4, 1, 5, 1)],
        [("o0", "mug", "small", ("pickable",), (5, 1), "r1")],
    )
    env = ChoresLiteEnv(h)
    from progress_rl.env.world import EnvState, TaskSpec
    task = TaskSpec(TaskKind.OBJNAV, ("o0",), 100, "facing_target")
    state = EnvState((1, 1), 1, None, frozenset({"r0"}), 0, ((5, 1),), task)
    with pytest.raises(InfeasibleTaskError):
        astar_min_steps(h, state)


def test_astar_matches_bfs_random():
    for env, state in random_instances(60, seed=2):
        register, neighbors = bfs_neighbors(env)
        cost, _ = bfs_shortest(register(state), neighbors, lambda k: k[-1])
        assert astar_min_steps(env.house, state) == cost


def test_expert_replay_random():
    for env, state in random_instances(100, seed=3):
        acts = expert_trajectory(env.house, state)
        assert len(acts) == env.t_min
        done = False
        for a in acts:
            assert not done
            _, _, r, done = env.step(a)
        assert done and env.state.success


# --- subgoal predicates --------------------------------------------------------

def test_fetch_plan_latches_in_order(three_room_house):
    env = ChoresLiteEnv(three_room_house)
    state, instr, graph = env.reset(TaskKind.FETCH, 0)
    env.state = replace(state, agent_cell=(1, 2), heading=1, visited_rooms=frozenset({"r0"}))
    plan = decompose_oracle(env.scene_graph(env.state), instr)
    assert [g.predicate for g in plan.subgoals] == ["enter", "enter", "sight", "approach", "grasp"]
    tracker = SubgoalTracker(env, plan)
    tracker.reset(env.state)
    assert tracker.latched == [False] * 5
    order = []
    for a in expert_trajectory(env.house, env.state):
        s, *_ = env.step(a)
        before = tracker.completed()
        tracker.update(s)
        order += list(range(before, tracker.completed()))
    assert order == [0, 1, 2, 3, 4]
    assert tracker.latched[-1]


def test_subgoal_soundness_random():
    checked = 0
    for env, state in random_instances(150, seed=4):
        plan = decompose_oracle(env.scene_graph(state), env.instruction)
        tracker = SubgoalTracker(env, plan)
        tracker.reset(state)
        for a in expert_trajectory(env.house, state):
            s, *_ = env.step(a)
            tracker.update(s)
        assert all(tracker.latched), (plan, tracker.latched)
        checked += 1
    assert checked == 150
