"""Answer-equivalence judging and rater-agreement statistics."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
import unicodedata
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Protocol

JUDGE_SYSTEM_PROMPT = resources.files("eogym.data").joinpath("judge_system.txt").read_text(encoding="utf-8")

# The user-message layout is not pinned down anywhere; this is our fixed template.
USER_TEMPLATE = "QUESTION:\n{question}\n\nREFERENCE:\n{reference}\n\nCANDIDATE:\n{candidate}"


class JudgeError(Exception):
    def __init__(self, message: str, retriable: bool = True):
        super().__init__(message)
        self.retriable = retriable


@dataclass(frozen=True)
class JudgeVerdict:
    is_same_meaning: bool
    reason: str
    backend: str  # exact | remote

    def __post_init__(self):
        if self.backend == "remote" and not self.reason.strip():
            raise ValueError("remote verdicts need a reason")


class Judge(Protocol):
    def __call__(self, reference: str, candidate: str, question: str = "") -> JudgeVerdict: ...


# --- exact backend ----------------------------------------------------------------

_NUM = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def normalize_text(text: str) -> str:
    s = unicodedata.normalize("NFKC", text).casefold()
    s = re.sub(r"[^\w\s.+-]", " ", s)
    s = re.sub(r"(?<!\d)[.](?!\d)", " ", s)  # drop sentence dots, keep decimal points
    return " ".join(s.split())


def _numbers_close(a: str, b: str, rel: float = 1e-6) -> bool:
    x, y = float(a), float(b)
    return math.isclose(x, y, rel_tol=rel, abs_tol=0.0) or x == y


def _tokens(text: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    for m in _NUM.finditer(text):
        words = text[pos:m.start()].replace("-", " ").split()
        out.extend(("w", w) for w in words)
        out.append(("n", m.group()))
        pos = m.end()
    out.extend(("w", w) for w in text[pos:].replace("-", " ").split())
    return out


def exact_match(reference: str, candidate: str) -> bool:
    a, b = normalize_text(reference), normalize_text(candidate)
    if a == b:
        return True
    ta, tb = _tokens(a), _tokens(b)
    if len(ta) != len(tb):
        return False
    for (ka, va), (kb, vb) in zip(ta, tb):
        if ka != kb:
            return False
        if ka == "w" and va != vb:
            return False
        if ka == "n" and not _numbers_close(va, vb):
            return False
    return True


class ExactJudge:
    """Normalized string equality with numeric tokens compared at 1e-6 relative."""

    backend = "exact"

    def __call__(self, reference: str, candidate: str, question: str = "") -> JudgeVerdict:
        same = exact_match(reference, candidate)
        return JudgeVerdict(same, "normalized match" if same else "normalized mismatch", "exact")


# --- remote backend -----------------------------------------------------------------

@dataclass(frozen=True)
class RemoteJudgeConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "judge"
    temperature: float = 0.0
    api_key: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 1.0

    @classmethod
    def from_env(cls, **overrides) -> "RemoteJudgeConfig":
        env = os.environ
        cfg = dict(base_url=env.get("EOGYM_JUDGE_URL", cls.base_url), model=env.get("EOGYM_JUDGE_MODEL", cls.model),
                   temperature=float(env.get("EOGYM_JUDGE_TEMPERATURE", cls.temperature)),
                   api_key=env.get("EOGYM_JUDGE_API_KEY"))
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**cfg)


def parse_verdict(content: str) -> JudgeVerdict:
    m = re.search(r"\{.*\}", content, flags=re.S)
    if m is None:
        raise JudgeError(f"judge reply has no JSON object: {content[:200]!r}")
    try:
        data = json.loads(m.group())
        same = data["is_same_meaning"]
        reason = str(data.get("reason", "")).strip()
    except (ValueError, KeyError) as exc:
        raise JudgeError(f"unparseable judge reply: {exc}") from None
    if not isinstance(same, bool):
        raise JudgeError(f"is_same_meaning is not a boolean: {same!r}")
    return JudgeVerdict(same, reason or ("same" if same else "different"), "remote")


class RemoteJudge:
    """Chat-completion judge. Failures raise JudgeError; there is no fallback verdict."""

    backend = "remote"

    def __init__(self, config: RemoteJudgeConfig | None = None, client=None):
        import httpx
        self.config = config or RemoteJudgeConfig.from_env()
        self._client = client or httpx.Client(timeout=self.config.timeout_s)
        self._httpx = httpx

    @staticmethod
    def request_key(question: str, reference: str, candidate: str) -> str:
        blob = json.dumps([question, reference, candidate], ensure_ascii=False)
        return hashlib.sha256(blob.encode()).hexdigest()[:32]

    def body(self, reference: str, candidate: str, question: str = "") -> dict:
        return {"model": self.config.model, "temperature": self.config.temperature,
                "messages": [{"role": "system", "content": JUDGE_SYSTEM_PROMPT},
                             {"role": "user", "content": USER_TEMPLATE.format(
                                 question=question, reference=reference, candidate=candidate)}]}

    def __call__(self, reference: str, candidate: str, question: str = "") -> JudgeVerdict:
        headers = {"Idempotency-Key": self.request_key(question, reference, candidate)}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                resp = self._client.post(url, json=self.body(reference, candidate, question), headers=headers)
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                return parse_verdict(content)
            except (self._httpx.HTTPError, KeyError, IndexError, ValueError, JudgeError) as exc:
                last = exc
                if attempt + 1 < self.config.max_retries:
                    time.sleep(self.config.backoff_s * 2 ** attempt)
        raise JudgeError(f"remote judge failed after {self.config.max_retries} attempts: {last}")


class RemoteTargetFilter:
    """Target filter backed by the same chat endpoint; returns the matching labels."""

    PROMPT = ("Given a target phrase and a list of object category labels, return JSON only: "
              '{"labels": [...]} with the labels that the target refers to.')

    def __init__(self, config: RemoteJudgeConfig | None = None, client=None):
        import httpx
        self.config = config or RemoteJudgeConfig.from_env()
        self._client = client or httpx.Client(timeout=self.config.timeout_s)
        self._cache: dict[tuple[str, tuple[str, ...]], set[str]] = {}

    def __call__(self, target: str, labels: Iterable[str]) -> set[str]:
        labels = tuple(sorted(set(labels)))
        key = (target, labels)
        if key not in self._cache:
            body = {"model": self.config.model, "temperature": 0.0,
                    "messages": [{"role": "system", "content": self.PROMPT},
                                 {"role": "user", "content": json.dumps({"target": target, "labels": labels})}]}
            resp = self._client.post(self.config.base_url.rstrip("/") + "/chat/completions", json=body)
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
            m = re.search(r"\{.*\}", content, flags=re.S)
            if m is None:
                raise JudgeError("target filter reply has no JSON object")
            self._cache[key] = set(json.loads(m.group()).get("labels", [])) & set(labels)
        return set(self._cache[key])


def make_judge(backend: str = "exact", **config) -> Judge:
    if backend == "exact":
        return ExactJudge()
    if backend == "remote":
        return RemoteJudge(RemoteJudgeConfig.from_env(**config))
    raise ValueError(f"unknown judge backend {backend!r}")


# --- agreement ------------------------------------------------------------------

@dataclass(frozen=True)
class AgreementCounts:
    """2x2 table: rater A yes/no crossed with rater B yes/no."""

    yy: int
    yn: int
    ny: int
    nn: int

    def __post_init__(self):
        if min(self.yy, self.yn, self.ny, self.nn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.yy + self.yn + self.ny + self.nn

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[bool, bool]]) -> "AgreementCounts":
        c = {(True, True): 0, (True, False): 0, (False, True): 0, (False, False): 0}
        for a, b in pairs:
            c[(bool(a), bool(b))] += 1
        return cls(c[True, True], c[True, False], c[False, True], c[False, False])


def observed_agreement(c: AgreementCounts) -> float:
    if c.total == 0:
        raise ValueError("agreement undefined for zero ratings")
    return (c.yy + c.nn) / c.total


def cohens_kappa(c: AgreementCounts) -> float:
    n = c.total
    if n == 0:
        raise ValueError("kappa undefined for zero ratings")
    po = (c.yy + c.nn) / n
    a_yes, b_yes = (c.yy + c.yn) / n, (c.yy + c.ny) / n
    pe = a_yes * b_yes + (1 - a_yes) * (1 - b_yes)
    if pe == 1.0:
        raise ValueError("kappa undefined: chance agreement is 1 (both raters constant)")
    return (po - pe) / (1 - pe)
