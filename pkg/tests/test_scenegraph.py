import itertools
import json

import httpx
import pytest

from progress_rl.env import ChoresLiteEnv
from progress_rl.errors import PlanningError, ProtocolError, TransportError
from progress_rl.scenegraph import (
    SceneGraph, Subgoal, SubgoalPlan, TaskInstruction, TaskKind, decompose_external, decompose_oracle,
    room_path, validate_plan,
)
from progress_rl.service import CallTelemetry, ServiceEndpoint

from conftest import random_instances

ENDPOINT = ServiceEndpoint("http://decomposer.test/plan", timeout=1.0, retries=3, backoff_base=0.01)


def graph_one_room():
    return SceneGraph(
        rooms=[{"room_id": "r0", "room_kind": "kitchen", "extent": [1, 1, 4, 4]}],
        objects=[{"object_id": "o0", "category": "mug", "size_class": "small",
                  "affordances": ["pickable"], "containing_room": "r0", "cell": [2, 2]}],
        adjacency=[],
        agent={"room": "r0", "cell": [1, 1], "heading": 1},
    )


def graph_chain():
    return SceneGraph(
        rooms=[{"room_id": "kitchen", "room_kind": "kitchen", "extent": [9, 1, 11, 3]},
               {"room_id": "hall", "room_kind": "hall", "extent": [5, 1, 7, 3]},
               {"room_id": "bedroom", "room_kind": "bedroom", "extent": [1, 1, 3, 3]}],
        objects=[{"object_id": "o0", "category": "mug", "size_class": "small",
                  "affordances": ["pickable"], "containing_room": "kitchen", "cell": [11, 2]}],
        adjacency=[{"rooms": ["bedroom", "hall"], "door": [4, 2]}, {"rooms": ["hall", "kitchen"], "door": [8, 2]}],
        agent={"room": "bedroom", "cell": [1, 2], "heading": 1},
    )


def test_single_room_pickup():
    plan = decompose_oracle(graph_one_room(), TaskInstruction(TaskKind.PICKUP, {"category": "mug"}))
    assert [(g.predicate, g.target) for g in plan.subgoals] == [("sight", "o0"), ("approach", "o0"), ("grasp", "o0")]
    assert plan.K == 3


def test_chain_fetch():
    g = graph_chain()
    plan = decompose_oracle(g, TaskInstruction(TaskKind.FETCH, {"category": "mug"}))
    assert [(s.predicate, s.target) for s in plan.subgoals] == [
        ("enter", "hall"), ("enter", "kitchen"), ("sight", "o0"), ("approach", "o0"), ("grasp", "o0")]
    # breadth-first room path agrees
    assert room_path(g, "bedroom", "kitchen") == ["bedroom", "hall", "kitchen"]


def test_two_room_roomvisit_nearest_first():
    g = SceneGraph(
        rooms=[{"room_id": "a", "room_kind": "hall", "extent": [1, 1, 2, 2]},
               {"room_id": "b", "room_kind": "office", "extent": [4, 1, 5, 2]}],
        objects=[], adjacency=[{"rooms": ["a", "b"], "door": [3, 1]}],
        agent={"room": "b", "cell": [4, 1], "heading": 0},
    )
    plan = decompose_oracle(g, TaskInstruction(TaskKind.ROOMVISIT, {"room_count": 2}))
    got = [s.target for s in plan.subgoals]
    # brute force: the order whose first hop is shortest from the start room
    hops = {("a", "b"): 1, ("b", "a"): 1, ("a", "a"): 0, ("b", "b"): 0}
    best = min(itertools.permutations(["a", "b"]), key=lambda o: (hops[("b", o[0])], o))
    assert got == list(best) == ["b", "a"]


def test_unresolvable_target_names_entity():
    with pytest.raises(PlanningError, match="sofa"):
        decompose_oracle(graph_one_room(), TaskInstruction(TaskKind.OBJNAV, {"category": "sofa"}))


def test_relative_tie_break_reported():
    g = graph_one_room()
    g.objects.append({"object_id": "o1", "category": "mug", "size_class": "small",
                      "affordances": ["pickable"], "containing_room": "r0", "cell": [3, 3]})
    plan = decompose_oracle(g, TaskInstruction(TaskKind.OBJNAV_REL, {"category": "mug", "attribute": "largest"}))
    assert plan.subgoals[0].target == "o0"
    assert plan.metadata["tie_break"]["candidates"] == ["o0", "o1"]


def test_determinism():
    g = graph_chain()
    instr = TaskInstruction(TaskKind.OBJNAV, {"category": "mug"})
    assert decompose_oracle(g, instr) == decompose_oracle(g, instr)


def test_scene_graph_invariants():
    with pytest.raises(PlanningError):
        SceneGraph(rooms=[{"room_id": "r0", "room_kind": "x", "extent": [0, 0, 1, 1]}],
                   objects=[{"object_id": "o0", "category": "mug", "size_class": "small",
                             "affordances": [], "containing_room": "nowhere", "cell": [0, 0]}],
                   adjacency=[])
    with pytest.raises(PlanningError):
        SceneGraph(rooms=[{"room_id": "a", "room_kind": "x", "extent": [0, 0, 1, 1]},
                          {"room_id": "b", "room_kind": "x", "extent": [3, 0, 4, 1]}],
                   objects=[], adjacency=[])


def test_bad_instruction_payload():
    with pytest.raises(PlanningError):
        TaskInstruction(TaskKind.OBJNAV_REL, {"category": "mug"})


# --- validation ------------------------------------------------------------------

def test_oracle_plan_validates():
    g = graph_chain()
    assert validate_plan(decompose_oracle(g, TaskInstruction(TaskKind.FETCH, {"category": "mug"})), g) == []


def test_contiguity_violation():
    plan = SubgoalPlan((Subgoal(1, "", "sight", "o0"), Subgoal(3, "", "approach", "o0")))
    v = validate_plan(plan, graph_one_room())
    assert [(x.index, x.kind) for x in v] == [(2, "contiguity")]


def test_dangling_target_violation():
    plan = SubgoalPlan((Subgoal(1, "", "sight", "o9"),))
    v = validate_plan(plan, graph_one_room())
    assert v[0].kind == "resolution" and "o9" in v[0].message


def test_minimal_room_path_random():
    for env, state in random_instances(80, seed=9):
        graph = env.scene_graph(state)
        plan = decompose_oracle(graph, env.instruction)
        if env.instruction.kind is TaskKind.ROOMVISIT:
            assert len(plan.subgoals) == len(graph.rooms)
            continue
        target = graph.object_by_id(plan.metadata["target"])
        path = room_path(graph, graph.agent["room"], target["containing_room"])
        assert sum(g.predicate == "enter" for g in plan.subgoals) == len(path) - 1
        assert validate_plan(plan, graph) == []


# --- external port -----------------------------------------------------------------

def _oracle_echo(request):
    body = json.loads(request.content)
    graph = SceneGraph.from_dict(body["scene_graph"])
    instr = TaskInstruction.from_dict(body["instruction"])
    assert body["prompt_template_version"]
    return httpx.Response(200, json=decompose_oracle(graph, instr).to_wire())


def test_external_roundtrip_identity():
    g = graph_chain()
    instr = TaskInstruction(TaskKind.FETCH, {"category": "mug"})
    got = decompose_external(ENDPOINT, g, instr, transport=httpx.MockTransport(_oracle_echo))
    assert got == decompose_oracle(g, instr)


def test_external_invalid_plan_is_protocol_error():
    bad = {"subgoals": [{"index": 1, "description": "find it", "predicate": "sight", "target": "o42"}]}
    transport = httpx.MockTransport(lambda req: httpx.Response(200, json=bad))
    with pytest.raises(ProtocolError) as err:
        decompose_external(ENDPOINT, graph_one_room(), TaskInstruction(TaskKind.OBJNAV, {"category": "mug"}),
                           transport=transport)
    assert err.value.raw == bad


def test_external_unparseable_is_protocol_error():
    transport = httpx.MockTransport(lambda req: httpx.Response(200, text="not json"))
    with pytest.raises(ProtocolError) as err:
        decompose_external(ENDPOINT, graph_one_room(), TaskInstruction(TaskKind.OBJNAV, {"category": "mug"}),
                           transport=transport)
    assert err.value.raw == "not json"


def test_external_retries_after_timeouts():
    calls = {"n": 0}

    def flaky(request):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise httpx.ReadTimeout("slow", request=request)
        return _oracle_echo(request)

    sleeps = []
    tel = CallTelemetry()
    g = graph_one_room()
    instr = TaskInstruction(TaskKind.PICKUP, {"category": "mug"})
    plan = decompose_external(ENDPOINT, g, instr, transport=httpx.MockTransport(flaky),
                              sleep=sleeps.append, telemetry=tel)
    assert plan == decompose_oracle(g, instr)
    assert tel.retries == 2 and tel.attempts == 3
    assert sleeps == [0.01, 0.02]


def test_external_gives_up_after_bounded_retries():
    def down(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(TransportError) as err:
        decompose_external(ENDPOINT, graph_one_room(), TaskInstruction(TaskKind.PICKUP, {"category": "mug"}),
                           transport=httpx.MockTransport(down), sleep=lambda s: None)
    assert err.value.attempts == ENDPOINT.retries + 1


def test_external_sends_bearer_token():
    seen = {}

    def capture(request):
        seen["auth"] = request.headers.get("authorization")
        return _oracle_echo(request)

    ep = ServiceEndpoint(ENDPOINT.url, token="s3cret")
    decompose_external(ep, graph_one_room(), TaskInstruction(TaskKind.PICKUP, {"category": "mug"}),
                       transport=httpx.MockTransport(capture))
    assert seen["auth"] == "Bearer s3cret"
