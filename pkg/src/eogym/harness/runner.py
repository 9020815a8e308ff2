"""Evaluation orchestration: rollouts, judging, metrics and artifacts."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..datalake import build_index
from ..episode import (
    BudgetExhaustedError, EpisodeBudget, Environment, Task, Trajectory, load_tasks, read_trajectories,
    write_trajectories,
)
from ..judge import ExactJudge, Judge
from ..metrics import Attempt, EvalReport, QuestionResult, build_report
from ..toolkit.detection import load_annotations
from ..toolkit.semantic import TargetFilter
from ..toolkit.types import ExecutionMode, derive_seed
from .agents import Agent, AgentState, AnswerAction

MAX_AGENT_TURNS = 200  # guards against an agent that never answers and never calls


class AgentUnavailable(Exception):
    """The agent could not produce an action (for example its endpoint is down)."""


def load_environment(fixture_dir: str | Path, target_filter: TargetFilter | None = None,
                     budget: int = 15) -> Environment:
    d = Path(fixture_dir)
    index = build_index(d / "manifest.jsonl")
    return Environment(index, load_annotations(d / "annotations.jsonl"), load_tasks(d / "tasks.jsonl"),
                       target_filter=target_filter, budget=EpisodeBudget(budget))


def attempt_seed(seed: int, task_id: str, attempt: int) -> int:
    return derive_seed(seed, task_id, attempt)


def run_attempt(env: Environment, task: Task, agent: Agent, mode: ExecutionMode, seed: int,
                attempt: int = 0) -> Trajectory:
    s = attempt_seed(seed, task.task_id, attempt)
    session = env.reset(task, ExecutionMode.from_dict({**mode.to_dict(), "seed": s}), seed=s)
    state = AgentState(task, session.initial, s, attempt)
    for _ in range(MAX_AGENT_TURNS):
        try:
            action = agent.act(state)
        except AgentUnavailable:
            return session.abort("agent unavailable")
        if isinstance(action, AnswerAction):
            return session.finalize(action.text)
        try:
            result = session.step(action.name, action.arguments, action.rationale)
        except BudgetExhaustedError:
            return session.trajectory
        state.calls.append(action)
        state.observations.append(result.observation)
    return session.abort("agent exceeded turn limit")


def judge_attempt(traj: Trajectory, judge: Judge, question: str = "") -> Attempt:
    correct = False
    if traj.termination == "answered" and traj.reference_answer is not None and traj.final_answer is not None:
        correct = judge(traj.reference_answer, traj.final_answer, question).is_same_meaning
    return Attempt(correct=correct, zero_call=traj.zero_call, tools=tuple(traj.tool_names()),
                   calls=len(traj.steps), illegal=traj.illegal_calls, answer=traj.final_answer,
                   trajectory_ref=f"{traj.task_id}#{traj.seed}")


@dataclass
class EvalRun:
    report: EvalReport
    results: list[QuestionResult]
    trajectories: list[Trajectory]
    elapsed_s: float


def run_eval(env: Environment, tasks: Sequence[Task], agent: Agent, mode: ExecutionMode = ExecutionMode(),
             k: int = 3, seed: int = 0, judge: Judge | None = None, early_stop: bool = True,
             out_dir: str | Path | None = None, bootstrap: int = 1000) -> EvalRun:
    """Up to ``k`` attempts per task, stopping at the first correct one when ``early_stop``."""
    judge = judge or ExactJudge()
    t0 = time.perf_counter()
    results, trajs = [], []
    for task in tasks:
        attempts = []
        for a in range(k):
            traj = run_attempt(env, task, agent, mode, seed, a)
            trajs.append(traj)
            att = judge_attempt(traj, judge, task.question)
            attempts.append(att)
            if early_stop and att.counts_correct:
                break
        results.append(QuestionResult(task.task_id, tuple(attempts), task.reference_tools, task.eo_task,
                                      env.reference_answer(task)))
    report = build_report(results, ks=range(1, k + 1), seed=seed, B=bootstrap, judge=judge)
    run = EvalRun(report, results, trajs, time.perf_counter() - t0)
    if out_dir is not None:
        write_artifacts(run, out_dir)
    return run


def write_artifacts(run: EvalRun, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(run.trajectories, out / "trajectories.jsonl")
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for q in run.results:
            fh.write(json.dumps(q.to_dict(), sort_keys=True) + "\n")
    write_report(run.report, out)


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")


def results_from_trajectories(trajectories: Sequence[Trajectory], tasks: Sequence[Task], judge: Judge,
                              early_stop: bool = True) -> list[QuestionResult]:
    """Rebuild question results from stored trajectories, in file order per task."""
    if not trajectories:
        raise ValueError("no trajectories to evaluate")
    by_task = {t.task_id: t for t in tasks}
    grouped: dict[str, list[Trajectory]] = {}
    for tr in trajectories:
        if tr.task_id not in by_task:
            raise ValueError(f"trajectory for unknown task {tr.task_id!r}")
        grouped.setdefault(tr.task_id, []).append(tr)
    results = []
    for task_id, trs in grouped.items():
        task = by_task[task_id]
        attempts = []
        for tr in trs:
            att = judge_attempt(tr, judge, task.question)
            attempts.append(att)
            if early_stop and att.counts_correct:
                break
        ref = next((tr.reference_answer for tr in trs if tr.reference_answer is not None), task.reference_answer)
        results.append(QuestionResult(task_id, tuple(attempts), task.reference_tools, task.eo_task, ref))
    return results


def eval_from_files(trajectory_path: str | Path, tasks_path: str | Path, judge: Judge | None = None,
                    ks: Sequence[int] = (1, 3), seed: int = 0, bootstrap: int = 1000) -> EvalReport:
    judge = judge or ExactJudge()
    trajs = read_trajectories(trajectory_path)
    results = results_from_trajectories(trajs, load_tasks(tasks_path), judge)
    return build_report(results, ks=ks, seed=seed, B=bootstrap, judge=judge)
