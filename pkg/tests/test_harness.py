import hashlib
import json
import socket
import time

import httpx
import pytest

from eogym.episode import EO_TASKS, read_trajectories
from eogym.harness.agents import make_agent
from eogym.harness.cli import main
from eogym.harness.fixtures import FixtureSpec, gen_fixtures
from eogym.harness.runner import run_attempt, run_eval
from eogym.harness.service import EpisodeClient, SessionManager, recv_frame, run_remote_attempt, send_frame, serve
from eogym.toolkit.registry import DATASET_FAMILIES
from eogym.toolkit.types import ExecutionMode


def _digest(folder):
    h = hashlib.sha256()
    for p in sorted(folder.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(folder)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_fixtures_are_reproducible(tmp_path):
    gen_fixtures(FixtureSpec(), tmp_path / "a")
    gen_fixtures(FixtureSpec(), tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    gen_fixtures(FixtureSpec(seed=8), tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_fixture_coverage(tasks):
    assert len(tasks) >= 20
    assert {t.eo_task for t in tasks} == set(EO_TASKS)
    assert {t.dataset_family for t in tasks} == set(DATASET_FAMILIES)


@pytest.mark.parametrize("policy", ["random_legal", "greedy_heuristic"])
def test_agents_are_seeded(env, tasks, policy):
    agent = make_agent(policy)
    for t in tasks[:8]:
        a = run_attempt(env, t, agent, ExecutionMode(), 5, 1)
        b = run_attempt(env, t, agent, ExecutionMode(), 5, 1)
        assert a.to_json() == b.to_json()
        assert len(a.steps) <= 15


def test_early_stop_stops_after_first_success(env, tasks):
    run = run_eval(env, tasks[:4], make_agent("optimal"), k=3, bootstrap=20)
    assert all(q.n == 1 for q in run.results)
    run = run_eval(env, tasks[:4], make_agent("optimal"), k=3, early_stop=False, bootstrap=20)
    assert all(q.n == 3 for q in run.results)


def test_unverified_mode_still_answers(env, tasks):
    run = run_eval(env, tasks, make_agent("optimal"), ExecutionMode(response="unverified"), k=1, bootstrap=20)
    assert 0.0 < run.report.pass_at_k[1]["value"] <= 1.0


# --- service ------------------------------------------------------------------------

@pytest.fixture
def service(env, tmp_path):
    with serve(env, persist_path=tmp_path / "served.jsonl", idle_timeout_s=60) as h:
        yield h


def test_loopback_session(service):
    with EpisodeClient(*service.tcp_address) as c:
        r = c.reset("sard_left_ratio")
        sid = r["session_id"]
        assert r["kind"] == "observation" and r["body"]["calls_remaining"] == 15
        r = c.step(sid, 1, "crop_optical_or_sar_image", {"image_id": "sard_0", "aoi": [0, 0, 0.5, 1]})
        crop = r["body"]["observation"]["payload"]["image_id"]
        r = c.step(sid, 2, "get_object_bbox_by_sar_image", {"image_id": crop, "target": "ship"})
        assert r["body"]["calls_remaining"] == 13
        r = c.step(sid, 3, "basic_calculator", {"expression": "4/7"})
        assert r["body"]["observation"]["payload"]["value"] == pytest.approx(4 / 7)
        r = c.final(sid, "0.5714")
        assert r["kind"] == "final" and r["body"]["trajectory"]["termination"] == "answered"
        assert len(r["body"]["trajectory"]["steps"]) == 3
    assert len(read_trajectories(service.manager.persist_path)) == 1


def test_protocol_errors(service):
    with EpisodeClient(*service.tcp_address) as c:
        r = c.step("s999", 1, "basic_calculator", {"expression": "1"})
        assert r["kind"] == "error" and r["body"]["code"] == "protocol"
        assert c.reset("unknown_task")["kind"] == "error"
        sid = c.reset("sard_ship_count")["session_id"]
        c.step(sid, 1, "basic_calculator", {"expression": "1"})
        r = c.step(sid, 1, "basic_calculator", {"expression": "1"})  # repeated call_index
        assert r["body"]["code"] == "protocol"
        assert c.final(sid, "x")["kind"] == "error"  # session was aborted
    aborted = service.manager.closed[-1]
    assert aborted.termination == "aborted" and len(aborted.steps) == 1


def test_malformed_frame(service):
    with socket.create_connection(service.tcp_address) as s:
        s.sendall(b"\x00\x00\x00\x05hello")
        r = recv_frame(s)
        assert r["kind"] == "error"


def test_interleaved_sessions(service):
    with EpisodeClient(*service.tcp_address) as c1, EpisodeClient(*service.tcp_address) as c2:
        a = c1.reset("sard_ship_count")["session_id"]
        b = c2.reset("xview_vehicle_count")["session_id"]
        assert a != b
        c1.step(a, 1, "get_object_bbox_by_sar_image", {"image_id": "sard_0", "target": "ship"})
        c2.step(b, 1, "get_object_bbox_by_optical_image", {"image_id": "xview_0", "target": "vehicle"})
        c2.step(b, 2, "basic_calculator", {"expression": "1+1"})
        ta = c1.final(a, "7")["body"]["trajectory"]
        tb = c2.final(b, "7")["body"]["trajectory"]
    assert [s["call"]["name"] for s in ta["steps"]] == ["get_object_bbox_by_sar_image"]
    assert len(tb["steps"]) == 2
    assert sorted(t.task_id for t in service.manager.closed) == ["sard_ship_count", "xview_vehicle_count"]


def test_idle_sessions_are_reaped_once(env, tmp_path):
    mgr = SessionManager(env, tmp_path / "p.jsonl", idle_timeout_s=5)
    sid = mgr.handle({"kind": "reset", "body": {"task_id": "sard_ship_count"}})["session_id"]
    mgr.handle({"kind": "step", "session_id": sid,
                "body": {"call_index": 1, "name": "basic_calculator", "arguments": {"expression": "1"}}})
    assert mgr.reap_idle(time.monotonic() + 1) == []
    assert mgr.reap_idle(time.monotonic() + 10) == [sid]
    assert mgr.reap_idle(time.monotonic() + 20) == []
    persisted = read_trajectories(tmp_path / "p.jsonl")
    assert len(persisted) == 1 and persisted[0].termination == "aborted" and len(persisted[0].steps) == 1


def test_service_matches_in_process(env, tasks, service):
    agent = make_agent("optimal")
    for mode in (ExecutionMode(), ExecutionMode(rename=True, response="unverified")):
        with EpisodeClient(*service.tcp_address) as c:
            for t in tasks:
                remote = run_remote_attempt(c, t, agent, mode, 3, 0)
                local = run_attempt(env, t, agent, mode, 3, 0)
                assert remote.to_json() == local.to_json()


def test_http_facade(service):
    base = "http://%s:%d/v1/sessions" % service.http_address
    with httpx.Client() as h:
        r = h.post(base, json={"task_id": "dior_scene_type"}).json()
        sid = r["session_id"]
        assert r["messages"][0]["role"] == "system" and "dior_0" in r["messages"][1]["content"]
        assert any(t["function"]["name"] == "analyze_optical_scene" for t in r["tools"])
        tc = {"id": "c1", "type": "function",
              "function": {"name": "analyze_optical_scene", "arguments": json.dumps({"image_id": "dior_0"})}}
        r = h.post(f"{base}/{sid}/tool_calls", json={"tool_calls": [tc]}).json()
        assert r["messages"][0]["tool_call_id"] == "c1" and r["calls_remaining"] == 14
        obs = json.loads(r["messages"][0]["content"])
        assert obs["payload"]["scene"] == "airport"
        r = h.post(f"{base}/{sid}/final", json={"content": "airport"}).json()
        assert r["trajectory"]["final_answer"] == "airport"
        assert h.post(f"{base}/{sid}/final", json={"content": "again"}).status_code == 409
        assert h.post(base, json={"task_id": "nope"}).status_code == 400


def test_frame_round_trip():
    a, b = socket.socketpair()
    with a, b:
        send_frame(a, {"kind": "step", "body": {"x": [1, 2]}})
        assert recv_frame(b) == {"kind": "step", "body": {"x": [1, 2]}}
        a.close()
        assert recv_frame(b) is None


# --- command line ----------------------------------------------------------------------

def test_cli_run_eval_synthcheck(fixture_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(fixture_dir), "--agent", "optimal", "--k", "2", "--out", str(out),
                 "--bootstrap", "50"]) == 0
    assert "pass@1" in capsys.readouterr().out
    assert main(["eval", str(out / "trajectories.jsonl"), str(fixture_dir / "tasks.jsonl"), "--format", "json",
                 "--k", "2", "--bootstrap", "50"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["pass_at_k"]["1"]["value"] == 1.0
    assert main(["synthcheck", str(out / "trajectories.jsonl"), "--tasks", str(fixture_dir / "tasks.jsonl")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["valid"] == summary["trajectories"] and summary["over_budget"] == 0


def test_cli_errors_are_json(fixture_dir, tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["eval", str(empty), str(fixture_dir / "tasks.jsonl")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "empty-input"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"temperature": 1}))
    assert main(["run", str(fixture_dir), "--config", str(cfg)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "config"


def test_cli_config_file_and_rename_audit(fixture_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 1, "prompt": "detailed", "schema_set": "all"}))
    assert main(["rename-audit", str(fixture_dir), "--config", str(cfg)]) == 0
    audit = json.loads(capsys.readouterr().out)
    assert audit["diffs"] == [] and audit["attempts"] == audit["tasks"]


def test_cli_index_and_fixtures(tmp_path, capsys):
    assert main(["fixtures", str(tmp_path / "fx")]) == 0
    capsys.readouterr()
    assert main(["index", str(tmp_path / "fx" / "manifest.jsonl"), "--strict"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["violations"] == [] and out["records"] == sum(out["counts"].values())
