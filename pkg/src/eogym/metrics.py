"""Pass@k, bootstrap intervals, trajectory diagnostics and report output.

Means are taken with ``math.fsum`` so results do not depend on summation
order, which keeps reports byte-identical across machines.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .judge import Judge


def _mean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise ValueError("mean of empty sequence")
    return math.fsum(vals) / len(vals)


# --- data model ---------------------------------------------------------------

@dataclass(frozen=True)
class Attempt:
    correct: bool
    zero_call: bool
    tools: tuple[str, ...] = ()
    calls: int = 0  # consumed function calls
    illegal: int = 0  # calls whose observation was empty or an error
    answer: str | None = None
    trajectory_ref: str | None = None

    @property
    def counts_correct(self) -> bool:
        # answering without any tool call is a failure whatever the text says
        return self.correct and not self.zero_call

    def to_dict(self) -> dict:
        return {"correct": self.correct, "zero_call": self.zero_call, "tools": list(self.tools),
                "calls": self.calls, "illegal": self.illegal, "answer": self.answer,
                "trajectory_ref": self.trajectory_ref}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Attempt":
        return cls(bool(d["correct"]), bool(d["zero_call"]), tuple(d.get("tools", ())), int(d.get("calls", 0)),
                   int(d.get("illegal", 0)), d.get("answer"), d.get("trajectory_ref"))


@dataclass(frozen=True)
class QuestionResult:
    task_id: str
    attempts: tuple[Attempt, ...]  # generation order
    reference_tools: tuple[str, ...]
    eo_task: str = ""
    reference_answer: str | None = None

    def __post_init__(self):
        if not self.reference_tools:
            raise ValueError(f"{self.task_id}: reference call count L must be >= 1")

    @property
    def L(self) -> int:
        return len(self.reference_tools)

    @property
    def n(self) -> int:
        return len(self.attempts)

    @property
    def c(self) -> int:
        return sum(a.counts_correct for a in self.attempts)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "attempts": [a.to_dict() for a in self.attempts],
                "reference_tools": list(self.reference_tools), "eo_task": self.eo_task,
                "reference_answer": self.reference_answer}

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuestionResult":
        return cls(d["task_id"], tuple(Attempt.from_dict(a) for a in d["attempts"]), tuple(d["reference_tools"]),
                   d.get("eo_task", ""), d.get("reference_answer"))


# --- Pass@k ---------------------------------------------------------------------

def pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Unbiased estimator 1 - C(n-c, k) / C(n, k), exactly."""
    if not (0 <= c <= n):
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return Fraction(1)
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return 1 - miss


def early_stop_indicator(q: QuestionResult, k: int) -> int:
    return int(any(a.counts_correct for a in q.attempts[:k]))


def pass_at_k_early_stopped(results: Sequence[QuestionResult], k: int) -> float:
    """Share of questions with a correct attempt among the first min(k, generated)."""
    if not results:
        raise ValueError("no question results")
    if k < 1:
        raise ValueError("k must be >= 1")
    return _mean(early_stop_indicator(q, k) for q in results)


def pass_at_k_unbiased(results: Sequence[QuestionResult], k: int) -> float:
    """Dataset mean of the unbiased estimator over all generated attempts."""
    if not results:
        raise ValueError("no question results")
    return _mean(float(pass_at_k(q.n, q.c, k)) for q in results)


def bootstrap_ci(values: Sequence[float], B: int = 1000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval of the mean over question-level resamples.

    Resample b draws from its own generator seeded by (seed, b), so the
    result does not depend on how resamples are scheduled.
    """
    vals = np.asarray(list(values), dtype=np.float64)
    n = vals.size
    if n == 0:
        raise ValueError("bootstrap of empty input")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    means = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        means[b] = math.fsum(vals[rng.integers(0, n, n)]) / n
    alpha = (1 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1 - alpha])
    return float(lo), float(hi)


# --- diagnostics -------------------------------------------------------------------

def consumed_attempts(q: QuestionResult) -> tuple[Attempt, ...]:
    """Attempts up to and including the first correct one, else all."""
    for i, a in enumerate(q.attempts):
        if a.counts_correct:
            return q.attempts[:i + 1]
    return q.attempts


@dataclass(frozen=True)
class ToolMatch:
    exact: bool
    in_order: bool
    any: bool


def _is_subsequence(ref: Sequence[str], pred: Sequence[str]) -> bool:
    it = iter(pred)
    return all(any(p == r for p in it) for r in ref)


def _multiset_covers(pred: Sequence[str], ref: Sequence[str]) -> bool:
    have: dict[str, int] = {}
    for p in pred:
        have[p] = have.get(p, 0) + 1
    for r in ref:
        if have.get(r, 0) == 0:
            return False
        have[r] -= 1
    return True


def tool_match(predicted: Sequence[str], reference: Sequence[str]) -> ToolMatch:
    pred, ref = list(predicted), list(reference)
    return ToolMatch(pred == ref, _is_subsequence(ref, pred), _multiset_covers(pred, ref))


@dataclass(frozen=True)
class Diagnostics:
    tool_call_ratio: float
    illegal_rate: float
    tool_exact: float
    tool_in_order: float
    tool_any: float
    zero_call_rate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def question_diagnostics(q: QuestionResult) -> dict:
    used = consumed_attempts(q)
    if not used:
        return {}
    matches = [tool_match(a.tools, q.reference_tools) for a in used]
    calls = sum(a.calls for a in used)
    return {
        "tool_call_ratio": _mean(a.calls / q.L for a in used),
        "illegal_rate": (sum(a.illegal for a in used) / calls) if calls else None,
        "tool_exact": _mean(float(m.exact) for m in matches),
        "tool_in_order": _mean(float(m.in_order) for m in matches),
        "tool_any": _mean(float(m.any) for m in matches),
    }


def diagnostics(results: Sequence[QuestionResult]) -> Diagnostics:
    """Per-question values over consumed attempts, then an unweighted mean over questions.

    Questions whose consumed attempts made no calls have no illegal rate and
    are left out of that mean.
    """
    if not results:
        raise ValueError("no question results")
    per_q = [d for d in (question_diagnostics(q) for q in results) if d]
    if not per_q:
        raise ValueError("no question has any attempt")

    def avg(key):
        vals = [d[key] for d in per_q if d[key] is not None]
        return _mean(vals) if vals else 0.0

    attempts = [a for q in results for a in q.attempts]
    zero = sum(a.zero_call for a in attempts) / len(attempts)
    return Diagnostics(avg("tool_call_ratio"), avg("illegal_rate"), avg("tool_exact"), avg("tool_in_order"),
                       avg("tool_any"), zero)


# --- self-consistency -----------------------------------------------------------------

def answer_clusters(answers: Sequence[str], same: Callable[[str, str], bool]) -> list[list[int]]:
    """Transitive closure of pairwise equivalence; clusters ordered by first member."""
    parent = list(range(len(answers)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(answers)):
        for j in range(i + 1, len(answers)):
            if find(i) != find(j) and same(answers[i], answers[j]):
                parent[max(find(i), find(j))] = min(find(i), find(j))
    groups: dict[int, list[int]] = {}
    for i in range(len(answers)):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def majority_answer(answers: Sequence[str], same: Callable[[str, str], bool]) -> str | None:
    if not answers:
        return None
    clusters = answer_clusters(answers, same)
    best = max(len(c) for c in clusters)
    winner = next(c for c in clusters if len(c) == best)  # earliest cluster wins ties
    return answers[winner[0]]


def self_consistency(q: QuestionResult, judge: Judge, reference: str | None = None) -> bool:
    """Is the majority-voted final answer correct? Zero-call and unanswered attempts do not vote."""
    reference = q.reference_answer if reference is None else reference
    if reference is None:
        return False
    answers = [a.answer for a in q.attempts if not a.zero_call and a.answer is not None]
    same = lambda x, y: judge(x, y).is_same_meaning  # noqa: E731
    rep = majority_answer(answers, same)
    return rep is not None and judge(reference, rep).is_same_meaning


# --- reports ------------------------------------------------------------------------------

def l_bucket(L: int) -> str:
    return str(L) if L < 4 else "4+"


L_BUCKETS = ("1", "2", "3", "4+")


@dataclass
class EvalReport:
    n_questions: int
    pass_at_k: dict[int, dict[str, float]]  # k -> {value, lo, hi}
    diagnostics: Diagnostics
    self_consistency: float | None = None
    breakdowns: dict[str, dict[str, "EvalReport"]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"n_questions": self.n_questions,
             "pass_at_k": {str(k): v for k, v in sorted(self.pass_at_k.items())},
             **self.diagnostics.to_dict(), "self_consistency": self.self_consistency}
        if self.breakdowns:
            d["breakdowns"] = {key: {g: r.to_dict() for g, r in sorted(groups.items())}
                               for key, groups in sorted(self.breakdowns.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def _rows(self) -> list[tuple[str, str, dict]]:
        rows = [("all", "all", self.to_dict())]
        for key, groups in sorted(self.breakdowns.items()):
            rows += [(key, g, r.to_dict()) for g, r in sorted(groups.items())]
        return rows

    def _columns(self) -> list[str]:
        ks = [f"pass@{k}" for k in sorted(self.pass_at_k)]
        return ["group", "value", "n", *ks, "tool_call_ratio", "illegal_rate", "tool_exact", "tool_in_order",
                "tool_any", "zero_call_rate"]

    def _flat(self, key, group, d) -> list[str]:
        out = [key, group, str(d["n_questions"])]
        out += [f"{d['pass_at_k'][str(k)]['value']:.4f}" for k in sorted(self.pass_at_k)]
        out += [f"{d[c]:.4f}" for c in ("tool_call_ratio", "illegal_rate", "tool_exact", "tool_in_order",
                                        "tool_any", "zero_call_rate")]
        return out

    def to_table(self) -> str:
        header = self._columns()
        body = [self._flat(*r) for r in self._rows()]
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(header)]
        fmt = lambda row: "  ".join(c.ljust(w) if i < 2 else c.rjust(w)  # noqa: E731
                                    for i, (c, w) in enumerate(zip(row, widths)))
        lines = [fmt(header), "  ".join("-" * w for w in widths), *(fmt(r) for r in body)]
        ci = [f"pass@{k} 95% CI [{v['lo']:.4f}, {v['hi']:.4f}]" for k, v in sorted(self.pass_at_k.items())]
        if self.self_consistency is not None:
            ci.append(f"self-consistency {self.self_consistency:.4f}")
        return "\n".join(lines + [""] + ci) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self._columns())
        for r in self._rows():
            w.writerow(self._flat(*r))
        return buf.getvalue()


def build_report(results: Sequence[QuestionResult], ks: Sequence[int] = (1, 3), seed: int = 0, B: int = 1000,
                 judge: Judge | None = None, with_breakdowns: bool = True) -> EvalReport:
    if not results:
        raise ValueError("no question results")
    pk = {}
    for k in sorted(set(ks)):
        ind = [early_stop_indicator(q, k) for q in results]
        lo, hi = bootstrap_ci(ind, B=B, seed=seed)
        pk[k] = {"value": _mean(ind), "lo": lo, "hi": hi}
    sc = None
    if judge is not None and all(q.reference_answer is not None for q in results):
        sc = _mean(float(self_consistency(q, judge)) for q in results)
    report = EvalReport(len(results), pk, diagnostics(results), sc)
    if with_breakdowns:
        for key in ("eo_task", "L_bucket"):
            groups = breakdown(results, key)
            report.breakdowns[key] = {g: build_report(qs, ks, seed, B, judge, with_breakdowns=False)
                                      for g, qs in groups.items()}
    return report


def breakdown(results: Sequence[QuestionResult], key: str) -> dict[str, list[QuestionResult]]:
    if key in ("eo_task", "task_family"):
        fn = lambda q: q.eo_task  # noqa: E731
    elif key == "L_bucket":
        fn = lambda q: l_bucket(q.L)  # noqa: E731
    else:
        raise ValueError(f"unknown breakdown key {key!r}")
    groups: dict[str, list[QuestionResult]] = {}
    for q in results:
        groups.setdefault(fn(q), []).append(q)
    return dict(sorted(groups.items()))
