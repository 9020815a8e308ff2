"""Episode state machine: reset, step, finalize, plus trajectory records.

A session wraps one EpisodeContext and enforces the call budget. Every call
counts against the budget, including ones that come back as errors.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .datalake import DataLakeIndex
from .toolkit import calculator
from .toolkit.context import EpisodeContext
from .toolkit.detection import GroundTruthAnnotation
from .toolkit.execute import execute
from .toolkit.registry import (
    SKILL_TOOLS, canonical_name, function_manifest, normalize_family,
    schema_set,
)
from .toolkit.semantic import TargetFilter
from .toolkit.types import ExecutionMode, Observation, ToolCall

SCHEMA_VERSION = 1
EVAL_BUDGET = 15
SYNTHESIS_BUDGET = 50
TERMINATIONS = ("answered", "budget_exhausted", "aborted")
EO_TASKS = ("disaster_impact", "temporal_reasoning", "spatial_navigation", "visual_understanding",
            "object_counting", "geospatial_reasoning")


def _prompt(name: str) -> str:
    return resources.files("eogym.data").joinpath(name).read_text(encoding="utf-8")


SIMPLE_PROMPT = _prompt("prompt_simple.txt")
DETAILED_PROMPT = _prompt("prompt_detailed.txt")


def system_prompt(mode: ExecutionMode) -> str:
    return SIMPLE_PROMPT if mode.prompt == "simple" else DETAILED_PROMPT


class EpisodeError(Exception):
    code = "episode-error"


class UnknownTaskError(EpisodeError, KeyError):
    code = "unknown-task"


class MissingStartRecordError(EpisodeError):
    code = "missing-start-record"


class SessionClosedError(EpisodeError):
    code = "session-closed"


class BudgetExhaustedError(EpisodeError):
    code = "budget-exhausted"


class AnswerRuleError(EpisodeError):
    code = "answer-rule"


# --- tasks -------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    """One benchmark question with its reference trajectory.

    ``reference_calls`` may refer to earlier observations with ``$i.path``
    placeholders (0-based step index). ``answer_rule`` turns the observations of
    a trajectory into answer text; deferred tasks use it to resolve their
    reference answer at finalize time.
    """

    task_id: str
    question: str
    start_records: tuple[str, ...]
    dataset_family: str
    eo_task: str
    reference_tools: tuple[str, ...]
    reference_calls: tuple[Mapping[str, Any], ...]
    answer_rule: Mapping[str, Any]
    reference_answer: str | None = None
    deferred: bool = False

    def __post_init__(self):
        if not self.reference_tools:
            raise ValueError(f"{self.task_id}: reference trajectory must have at least one call")
        if len(self.reference_calls) != len(self.reference_tools):
            raise ValueError(f"{self.task_id}: reference_calls and reference_tools differ in length")
        if [c["name"] for c in self.reference_calls] != list(self.reference_tools):
            raise ValueError(f"{self.task_id}: reference_calls names disagree with reference_tools")
        if self.eo_task not in EO_TASKS:
            raise ValueError(f"{self.task_id}: unknown eo_task {self.eo_task!r}")
        if not self.deferred and self.reference_answer is None:
            raise ValueError(f"{self.task_id}: non-deferred task needs a reference answer")
        normalize_family(self.dataset_family)

    @property
    def L(self) -> int:
        return len(self.reference_tools)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "question": self.question, "start_records": list(self.start_records),
                "dataset_family": self.dataset_family, "eo_task": self.eo_task,
                "reference_tools": list(self.reference_tools),
                "reference_calls": [dict(c) for c in self.reference_calls],
                "answer_rule": dict(self.answer_rule), "reference_answer": self.reference_answer,
                "deferred": self.deferred}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Task":
        return cls(d["task_id"], d["question"], tuple(d["start_records"]), d["dataset_family"], d["eo_task"],
                   tuple(d["reference_tools"]), tuple(d["reference_calls"]), d["answer_rule"],
                   d.get("reference_answer"), bool(d.get("deferred", False)))


def load_tasks(path: str | Path) -> list[Task]:
    return [Task.from_dict(json.loads(line))
            for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def write_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


# --- placeholders and answer rules ----------------------------------------------

_REF = re.compile(r"^\$(\d+)((?:\.[A-Za-z0-9_]+)*)$")
_INLINE = re.compile(r"\{(\$\d+(?:\.[A-Za-z0-9_]+)*)\}")


def _lookup(ref: str, observations: Sequence[Observation]) -> Any:
    m = _REF.match(ref)
    if m is None:
        raise AnswerRuleError(f"bad reference {ref!r}")
    i = int(m.group(1))
    if i >= len(observations):
        raise AnswerRuleError(f"{ref}: only {len(observations)} observations")
    obs = observations[i]
    if obs.status != "ok":
        raise AnswerRuleError(f"{ref}: observation {i} is {obs.status}")
    cur: Any = obs.payload
    for key in filter(None, m.group(2).split(".")):
        try:
            cur = cur[int(key)] if isinstance(cur, list) else cur[key]
        except (KeyError, IndexError, ValueError, TypeError):
            raise AnswerRuleError(f"{ref}: no field {key!r}") from None
    return cur


def resolve_placeholders(obj: Any, observations: Sequence[Observation]) -> Any:
    """Substitute ``$i.path`` (whole value) and ``{$i.path}`` (inline text) references."""
    if isinstance(obj, str):
        if _REF.match(obj):
            return _lookup(obj, observations)
        return _INLINE.sub(lambda m: format_value(_lookup(m.group(1), observations)), obj)
    if isinstance(obj, list):
        return [resolve_placeholders(v, observations) for v in obj]
    if isinstance(obj, dict):
        return {k: resolve_placeholders(v, observations) for k, v in obj.items()}
    return obj


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (int, float)):
        return calculator.format_number(round(float(v), 4))
    return str(v)


def apply_answer_rule(rule: Mapping[str, Any], observations: Sequence[Observation]) -> str:
    """Answer text from a rule and the observations of one trajectory.

    Rules: ``value`` (format one field or an inline template), ``compare``
    (three-way label from two numbers), ``majority`` (most common attribute
    among a box list, ties broken alphabetically).
    """
    op = rule.get("op")
    if op == "value":
        return format_value(resolve_placeholders(rule["path"], observations))
    if op == "compare":
        a = float(resolve_placeholders(rule["a"], observations))
        b = float(resolve_placeholders(rule["b"], observations))
        tol = float(rule.get("tol", 0.0))
        lo, same, hi = rule["labels"]
        return same if abs(b - a) <= tol else (hi if b > a else lo)
    if op == "majority":
        items = resolve_placeholders(rule["path"], observations)
        values = []
        for it in items:
            cur = it
            for key in rule["field"].split("."):
                cur = cur.get(key) if isinstance(cur, dict) else None
            if cur is not None:
                values.append(str(cur))
        if not values:
            raise AnswerRuleError("majority over no values")
        counts = Counter(values)
        best = max(counts.values())
        return min(v for v, n in counts.items() if n == best)
    raise AnswerRuleError(f"unknown answer rule {op!r}")


# --- trajectories ----------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    call: ToolCall
    observation: Observation

    def to_dict(self) -> dict:
        return {"call": self.call.to_dict(), "observation": self.observation.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Step":
        return cls(ToolCall.from_dict(d["call"]), Observation.from_dict(d["observation"]))


@dataclass
class Trajectory:
    task_id: str
    mode: ExecutionMode
    seed: int
    budget: int = EVAL_BUDGET
    steps: list[Step] = field(default_factory=list)
    final_answer: str | None = None
    termination: str | None = None
    reference_answer: str | None = None  # resolved copy for deferred tasks
    schema_version: int = SCHEMA_VERSION

    @property
    def zero_call(self) -> bool:
        return not self.steps

    @property
    def closed(self) -> bool:
        return self.termination is not None

    def tool_names(self, canonical: bool = True) -> list[str]:
        names = [s.call.name for s in self.steps]
        return [canonical_name(n, self.mode.rename) for n in names] if canonical else names

    @property
    def illegal_calls(self) -> int:
        return sum(s.observation.status != "ok" for s in self.steps)

    def check(self) -> None:
        if len(self.steps) > self.budget:
            raise ValueError(f"{self.task_id}: {len(self.steps)} steps exceed budget {self.budget}")
        if self.termination is not None and self.termination not in TERMINATIONS:
            raise ValueError(f"bad termination {self.termination!r}")
        if self.termination == "answered" and self.final_answer is None:
            raise ValueError("answered trajectory without a final answer")
        idx = [s.call.call_index for s in self.steps]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("call_index must be strictly increasing")

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "task_id": self.task_id, "mode": self.mode.to_dict(),
                "seed": self.seed, "budget": self.budget, "steps": [s.to_dict() for s in self.steps],
                "final_answer": self.final_answer, "termination": self.termination,
                "zero_call": self.zero_call, "reference_answer": self.reference_answer}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Trajectory":
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ValueError(f"unsupported trajectory schema {d.get('schema_version')}")
        t = cls(d["task_id"], ExecutionMode.from_dict(d["mode"]), int(d["seed"]), int(d.get("budget", EVAL_BUDGET)),
                [Step.from_dict(s) for s in d.get("steps", ())], d.get("final_answer"), d.get("termination"),
                d.get("reference_answer"))
        t.check()
        return t


def write_trajectories(trajectories: Iterable[Trajectory], path: str | Path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(t.to_json() + "\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    return [Trajectory.from_dict(json.loads(line))
            for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def canonical_steps(traj: Trajectory) -> list[dict]:
    """Steps with tool names mapped back to backend names, for rename comparisons."""
    out = []
    for s in traj.steps:
        d = s.to_dict()
        d["call"]["name"] = canonical_name(s.call.name, traj.mode.rename)
        out.append(d)
    return out


# --- sessions ------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeBudget:
    max_calls: int = EVAL_BUDGET

    def __post_init__(self):
        if self.max_calls < 1:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class InitialObservation:
    system_prompt: str
    question: str
    start_images: tuple[str, ...]
    tools: tuple[dict, ...]

    @property
    def tool_names(self) -> list[str]:
        return [t["function"]["name"] for t in self.tools]

    def to_dict(self) -> dict:
        return {"system_prompt": self.system_prompt, "question": self.question,
                "start_images": list(self.start_images), "tools": list(self.tools)}


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    calls_remaining: int


class Session:
    """One episode. Not thread-safe; callers serialize requests per session."""

    def __init__(self, env: "Environment", task: Task, mode: ExecutionMode, seed: int, budget: EpisodeBudget):
        self.env = env
        self.task = task
        self.mode = mode
        self.budget = budget
        schemas = schema_set(task.dataset_family, mode.schema_set, mode.rename)
        self.initial = InitialObservation(system_prompt(mode), task.question, tuple(task.start_records),
                                          tuple(function_manifest(schemas)))
        self.ctx = EpisodeContext(env.index, env.annotations, mode, frozenset(s.name for s in schemas),
                                  store=env.store, target_filter=env.target_filter)
        self.trajectory = Trajectory(task.task_id, mode, seed, budget.max_calls)

    @property
    def calls_remaining(self) -> int:
        return self.budget.max_calls - len(self.trajectory.steps)

    def _require_open(self):
        if self.trajectory.closed:
            raise SessionClosedError(f"session for {self.task.task_id} is {self.trajectory.termination}")

    def step(self, name: str | ToolCall, arguments: Any = None, rationale: str | None = None) -> StepResult:
        self._require_open()
        if self.calls_remaining <= 0:
            self.trajectory.termination = "budget_exhausted"
            raise BudgetExhaustedError(f"budget of {self.budget.max_calls} calls exhausted")
        if isinstance(name, ToolCall):
            name, arguments, rationale = name.name, name.arguments, name.rationale or rationale
        call = ToolCall(name, arguments, len(self.trajectory.steps) + 1, rationale)
        obs = execute(call, self.ctx)
        self.trajectory.steps.append(Step(call, obs))
        return StepResult(obs, self.calls_remaining)

    def finalize(self, answer: str) -> Trajectory:
        self._require_open()
        self.trajectory.final_answer = str(answer)
        self.trajectory.termination = "answered"
        self.trajectory.reference_answer = self.env.reference_answer(self.task)
        return self.trajectory

    def abort(self, reason: str = "") -> Trajectory:
        if not self.trajectory.closed:
            self.trajectory.termination = "aborted"
            self.trajectory.reference_answer = self.env.reference_answer(self.task)
        return self.trajectory


class Environment:
    """Holds the shared immutable state (index, annotations, tasks) and opens sessions."""

    def __init__(self, index: DataLakeIndex, annotations: Mapping[str, GroundTruthAnnotation],
                 tasks: Iterable[Task] = (), target_filter: TargetFilter | None = None,
                 budget: EpisodeBudget = EpisodeBudget()):
        from .toolkit.context import PatchStore
        self.index = index
        self.annotations = dict(annotations)
        self.tasks = {t.task_id: t for t in tasks}
        self.target_filter = target_filter
        self.budget = budget
        self.store = PatchStore(index)
        self._resolved: dict[str, str] = {}

    def task(self, task: str | Task) -> Task:
        if isinstance(task, Task):
            return task
        try:
            return self.tasks[task]
        except KeyError:
            raise UnknownTaskError(f"unknown task {task!r}") from None

    def reset(self, task: str | Task, mode: ExecutionMode = ExecutionMode(), seed: int | None = None,
              budget: EpisodeBudget | None = None) -> Session:
        task = self.task(task)
        missing = [r for r in task.start_records if r not in self.index]
        if missing:
            raise MissingStartRecordError(f"{task.task_id}: start records not in index: {missing}")
        return Session(self, task, mode, mode.seed if seed is None else seed, budget or self.budget)

    def replay_reference(self, task: Task) -> list[Observation]:
        """Run the reference calls in verified mode with every tool exposed."""
        ctx = EpisodeContext(self.index, self.annotations, ExecutionMode(), None, store=self.store,
                             target_filter=self.target_filter)
        observations: list[Observation] = []
        for i, c in enumerate(task.reference_calls):
            try:
                args = resolve_placeholders(c.get("arguments", {}), observations)
            except AnswerRuleError as exc:
                observations.append(Observation.error("unresolved-reference", str(exc)))
                continue
            observations.append(execute(ToolCall(c["name"], args, i + 1), ctx))
        return observations

    def reference_answer(self, task: Task) -> str | None:
        if not task.deferred:
            return task.reference_answer
        if task.task_id not in self._resolved:
            try:
                self._resolved[task.task_id] = apply_answer_rule(task.answer_rule, self.replay_reference(task))
            except AnswerRuleError:
                return None
        return self._resolved[task.task_id]


# --- structural validation ----------------------------------------------------------

NO_SUCCESSFUL_OBSERVATION = "No successful observation"
FABRICATED_INPUTS = "Fabricated inputs"


@dataclass(frozen=True)
class ValidationReport:
    task_id: str
    valid: bool
    reasons: tuple[str, ...] = ()
    categories: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "valid": self.valid, "reasons": list(self.reasons),
                "categories": list(self.categories)}


def core_tools(dataset_family: str) -> frozenset[str]:
    """Tools that count as relevant for a family: its skill subset.

    Listing tools are included because "how many captures" questions are
    answered from them directly.
    """
    return frozenset(SKILL_TOOLS[normalize_family(dataset_family)])


def validate_structure(traj: Trajectory, dataset_family: str | None = None) -> ValidationReport:
    """Deterministic first-layer checks on a finished trajectory."""
    reasons: list[str] = []
    cats: list[str] = []
    if not traj.steps:
        reasons.append("no-tool-step")
    if any(not s.call.payload_valid for s in traj.steps):
        reasons.append("invalid-payload")
    if traj.steps and not any(s.observation.status == "ok" for s in traj.steps):
        reasons.append("no-successful-observation")
        cats.append(NO_SUCCESSFUL_OBSERVATION)
    names = traj.tool_names()
    if dataset_family is not None and traj.steps and not core_tools(dataset_family) & set(names):
        reasons.append("missing-core-tool")
    for s, name in zip(traj.steps, names):
        if not s.call.payload_valid:
            continue
        args = s.call.parsed_arguments()
        if name == "get_mask_geospatial_relationship" and args.get("mask_a") == args.get("mask_b"):
            reasons.append("mask-compared-to-itself")
        elif name == "normalize_bounding_boxes" and not args.get("boxes"):
            reasons.append("empty-bounding-boxes")
        else:
            continue
        if FABRICATED_INPUTS not in cats:
            cats.append(FABRICATED_INPUTS)
    return ValidationReport(traj.task_id, not reasons, tuple(reasons), tuple(cats))
