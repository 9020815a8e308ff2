import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eogym.episode import (
    DETAILED_PROMPT, EVAL_BUDGET, FABRICATED_INPUTS, NO_SUCCESSFUL_OBSERVATION, SIMPLE_PROMPT, AnswerRuleError,
    BudgetExhaustedError, EpisodeBudget, MissingStartRecordError, SessionClosedError, Step, Task, Trajectory,
    UnknownTaskError, apply_answer_rule, format_value, resolve_placeholders, validate_structure,
)
from eogym.raster import read_patch
from eogym.toolkit.types import ExecutionMode, Observation, ToolCall


def _obs(**payload):
    return Observation.ok("scalar", payload)


def _ndvi(fixture_dir, scene):
    nir = read_patch(fixture_dir / "scenes" / scene / "B8.eog").astype(np.float64)[..., 0]
    red = read_patch(fixture_dir / "scenes" / scene / "B4.eog").astype(np.float64)[..., 0]
    return (nir - red) / (nir + red)


def test_reset_exposes_skill_tools_and_prompt(env):
    s = env.reset("s2_water_fraction")
    assert len(s.initial.tools) == 15
    assert s.initial.system_prompt == SIMPLE_PROMPT
    assert s.initial.start_images == ("s2_t1",)
    d = env.reset("s2_water_fraction", ExecutionMode(prompt="detailed", schema_set="all"))
    assert d.initial.system_prompt == DETAILED_PROMPT and len(d.initial.tools) == 35
    r = env.reset("sard_ship_count", ExecutionMode(rename=True))
    assert all(not n.startswith(("get_", "crop_", "basic_")) for n in r.initial.tool_names)


def test_reset_errors(env, tasks):
    with pytest.raises(UnknownTaskError):
        env.reset("nope")
    t = tasks[0]
    ghost = Task(t.task_id, t.question, ("ghost",), t.dataset_family, t.eo_task, t.reference_tools,
                 t.reference_calls, t.answer_rule, t.reference_answer)
    with pytest.raises(MissingStartRecordError):
        env.reset(ghost)


def test_budget_is_enforced(env):
    s = env.reset("sard_ship_count")
    assert EVAL_BUDGET == 15
    for i in range(15):
        r = s.step("basic_calculator", {"expression": f"{i}+1"})
        assert r.calls_remaining == 14 - i
    with pytest.raises(BudgetExhaustedError):
        s.step("basic_calculator", {"expression": "1+1"})
    t = s.trajectory
    assert t.termination == "budget_exhausted" and len(t.steps) == 15
    assert [st.call.call_index for st in t.steps] == list(range(1, 16))
    with pytest.raises(SessionClosedError):
        s.finalize("2")


def test_illegal_calls_consume_budget(env):
    s = env.reset("sard_ship_count", budget=EpisodeBudget(3))
    assert s.step("basic_calculator", "{broken").observation.error_code == "illegal-arguments"
    assert s.step("not_a_tool", {}).calls_remaining == 1
    assert s.trajectory.illegal_calls == 2


def test_zero_call_and_finalize(env):
    s = env.reset("sard_ship_count")
    t = s.finalize("7")
    assert t.zero_call and t.termination == "answered" and t.reference_answer == "7"
    with pytest.raises(SessionClosedError):
        s.step("basic_calculator", {"expression": "1"})
    assert s.abort() is t and t.termination == "answered"


def test_trajectory_round_trip(env):
    s = env.reset("sard_direction", ExecutionMode(rename=True, seed=4))
    s.step("access_object_bbox_by_sar_image", {"image_id": "sard_0", "target": "ship"}, "look for ships")
    t = s.finalize("right")
    back = Trajectory.from_dict(json.loads(t.to_json()))
    assert back.to_json() == t.to_json()
    assert back.tool_names() == ["get_object_bbox_by_sar_image"]
    assert back.tool_names(canonical=False) == ["access_object_bbox_by_sar_image"]


def test_trajectory_invariants():
    mode = ExecutionMode()
    step = Step(ToolCall("basic_calculator", {"expression": "1"}, 1), _obs(value=1))
    d = Trajectory("t", mode, 0, 1, [step, step], "1", "answered").to_dict()
    with pytest.raises(ValueError):
        Trajectory.from_dict(d)  # two steps over a budget of one
    d = Trajectory("t", mode, 0, 5, [step, step], "1", "answered").to_dict()
    with pytest.raises(ValueError):
        Trajectory.from_dict(d)  # repeated call_index
    with pytest.raises(ValueError):
        Trajectory.from_dict({**Trajectory("t", mode, 0).to_dict(), "schema_version": 99})


def test_deferred_answers_match_direct_computation(env, fixture_dir):
    median = float(np.median(_ndvi(fixture_dir, "s2_t2")))
    assert float(env.reference_answer(env.task("s2_next_ndvi_median"))) == pytest.approx(median, abs=5e-5)
    before, after = _ndvi(fixture_dir, "s2_t2").mean(), _ndvi(fixture_dir, "s2_t3").mean()
    want = "increased" if after > before else "decreased" if after < before else "unchanged"
    assert env.reference_answer(env.task("s2_vegetation_change")) == want


def test_reference_trajectories_fit_budget(tasks):
    assert all(1 <= t.L <= EVAL_BUDGET for t in tasks)


def test_task_validation(tasks):
    t = tasks[0]
    base = t.to_dict()
    assert Task.from_dict(base) == t
    for bad in ({"reference_tools": [], "reference_calls": []}, {"eo_task": "weather"},
                {"reference_answer": None}, {"reference_tools": ["basic_calculator"] * t.L}):
        with pytest.raises(ValueError):
            Task.from_dict({**base, **bad})


def test_answer_rules():
    obs = [_obs(count=3, items=[{"a": {"k": "x"}}, {"a": {"k": "y"}}, {"a": {"k": "y"}}]), _obs(mean=0.25)]
    assert apply_answer_rule({"op": "value", "path": "$0.count"}, obs) == "3"
    assert apply_answer_rule({"op": "value", "path": "{$0.count} of {$1.mean}"}, obs) == "3 of 0.25"
    assert apply_answer_rule({"op": "value", "path": "$0.items.1.a.k"}, obs) == "y"
    cmp = {"op": "compare", "a": "$1.mean", "b": "$0.count", "labels": ["lo", "same", "hi"]}
    assert apply_answer_rule(cmp, obs) == "hi"
    assert apply_answer_rule({**cmp, "tol": 5}, obs) == "same"
    assert apply_answer_rule({"op": "majority", "path": "$0.items", "field": "a.k"}, obs) == "y"
    tie = [_obs(items=[{"c": "b"}, {"c": "a"}])]
    assert apply_answer_rule({"op": "majority", "path": "$0.items", "field": "c"}, tie) == "a"
    for rule in ({"op": "value", "path": "$2.count"}, {"op": "value", "path": "$0.nope"}, {"op": "mode"}):
        with pytest.raises(AnswerRuleError):
            apply_answer_rule(rule, obs)
    with pytest.raises(AnswerRuleError):
        resolve_placeholders("$0.x", [Observation.error("unknown-tool")])


@pytest.mark.parametrize("value, text", [(True, "yes"), (False, "no"), (3, "3"), (0.1875, "0.1875"),
                                         (2 / 3, "0.6667"), ("airport", "airport")])
def test_format_value(value, text):
    assert format_value(value) == text


@given(st.integers(-10**6, 10**6))
def test_integers_format_without_decimals(n):
    assert format_value(n) == str(n)


def _traj(*steps, final="x"):
    t = Trajectory("t", ExecutionMode(), 0)
    for i, (name, args, obs) in enumerate(steps, 1):
        t.steps.append(Step(ToolCall(name, args, i), obs))
    t.final_answer, t.termination = final, "answered"
    return t


def test_validate_structure_categories():
    err = Observation.error("unknown-image")
    ok = _obs(value=1)
    r = validate_structure(_traj(("basic_calculator", {"expression": "1"}, err)))
    assert NO_SUCCESSFUL_OBSERVATION in r.categories and not r.valid
    r = validate_structure(_traj(("basic_calculator", {"expression": "1"}, Observation.empty("boxes"))))
    assert NO_SUCCESSFUL_OBSERVATION in r.categories
    r = validate_structure(_traj(("basic_calculator", {"expression": "1"}, err),
                                 ("basic_calculator", {"expression": "1"}, ok)))
    assert r.valid
    assert validate_structure(_traj()).reasons == ("no-tool-step",)
    r = validate_structure(_traj(("get_mask_geospatial_relationship", {"mask_a": "m1", "mask_b": "m1"}, ok)))
    assert r.categories == (FABRICATED_INPUTS,)
    r = validate_structure(_traj(("normalize_bounding_boxes", {"boxes": [], "from_size": [1, 1],
                                                               "to_size": [2, 2]}, ok)))
    assert "empty-bounding-boxes" in r.reasons
    r = validate_structure(_traj(("basic_calculator", "{bad", err)))
    assert "invalid-payload" in r.reasons
    r = validate_structure(_traj(("basic_calculator", {"expression": "1"}, ok)), "sardet100k")
    assert r.valid
    r = validate_structure(_traj(("get_multispectral_list", {"scene_id": "s"}, ok)), "sardet100k")
    assert "missing-core-tool" in r.reasons
