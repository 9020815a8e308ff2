import json

import httpx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from eogym.judge import (
    JUDGE_SYSTEM_PROMPT, AgreementCounts, ExactJudge, JudgeError, JudgeVerdict, RemoteJudge, RemoteJudgeConfig,
    RemoteTargetFilter, cohens_kappa, exact_match, make_judge, observed_agreement, parse_verdict,
)


@pytest.mark.parametrize("ref, cand", [
    ("Yes", "yes."), ("3", "3.0"), ("0.25", ".25"), ("1e-3", "0.001"), ("minor-damage", "Minor damage"),
    ("３", "3"), ("  airport ", "Airport"), ("0.5714", "0.57140000001"),
])
def test_exact_match_equivalent(ref, cand):
    assert exact_match(ref, cand)


@pytest.mark.parametrize("ref, cand", [
    ("3", "4"), ("3 cars", "three cars"), ("0.25", "0.2501"), ("increased", "decreased"), ("5", "5 6"),
])
def test_exact_match_different(ref, cand):
    assert not exact_match(ref, cand)


def test_exact_judge_verdict():
    v = ExactJudge()("7", "7", "how many?")
    assert v.is_same_meaning and v.backend == "exact"
    assert isinstance(make_judge("exact"), ExactJudge)
    with pytest.raises(ValueError):
        make_judge("coin")


@pytest.mark.parametrize("content, same", [
    ('{"is_same_meaning": true, "reason": "same count"}', True),
    ('Sure.\n```json\n{"is_same_meaning": false, "reason": "3 vs 4"}\n```', False),
])
def test_parse_verdict(content, same):
    v = parse_verdict(content)
    assert v.is_same_meaning is same and v.reason


@pytest.mark.parametrize("content", ["no json here", '{"is_same_meaning": "yes"}', "{broken"])
def test_parse_verdict_rejects(content):
    with pytest.raises(JudgeError):
        parse_verdict(content)


def test_remote_verdict_requires_reason():
    with pytest.raises(ValueError):
        JudgeVerdict(True, "", "remote")


def _reply(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def test_remote_judge_request_and_retry():
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) == 1:
            return httpx.Response(503)
        return _reply('{"is_same_meaning": true, "reason": "both say 7"}')

    cfg = RemoteJudgeConfig(base_url="http://judge/v1", model="m", backoff_s=0.0)
    judge = RemoteJudge(cfg, httpx.Client(transport=httpx.MockTransport(handler)))
    v = judge("7", "seven", "How many ships?")
    assert v.is_same_meaning and v.backend == "remote"
    assert len(seen) == 2
    assert seen[0].url.path == "/v1/chat/completions"
    assert seen[0].headers["Idempotency-Key"] == seen[1].headers["Idempotency-Key"]
    body = json.loads(seen[1].content)
    assert body["temperature"] == 0.0 and body["messages"][0]["content"] == JUDGE_SYSTEM_PROMPT
    assert "How many ships?" in body["messages"][1]["content"]


def test_remote_judge_gives_up_without_a_verdict():
    cfg = RemoteJudgeConfig(base_url="http://judge/v1", max_retries=2, backoff_s=0.0)
    judge = RemoteJudge(cfg, httpx.Client(transport=httpx.MockTransport(lambda r: _reply("maybe?"))))
    with pytest.raises(JudgeError):
        judge("a", "b")


def test_config_from_env(monkeypatch):
    monkeypatch.setenv("EOGYM_JUDGE_URL", "http://x/v1")
    monkeypatch.setenv("EOGYM_JUDGE_TEMPERATURE", "0.3")
    cfg = RemoteJudgeConfig.from_env(model="other")
    assert (cfg.base_url, cfg.temperature, cfg.model) == ("http://x/v1", 0.3, "other")


def test_remote_target_filter_caches():
    calls = []

    def handler(request):
        calls.append(request)
        return _reply('{"labels": ["car", "truck", "invented"]}')

    f = RemoteTargetFilter(RemoteJudgeConfig(base_url="http://j/v1"), httpx.Client(transport=httpx.MockTransport(handler)))
    assert f("vehicles", ["car", "truck", "ship"]) == {"car", "truck"}
    assert f("vehicles", ["ship", "truck", "car"]) == {"car", "truck"}
    assert len(calls) == 1


# --- agreement --------------------------------------------------------------

def _kappa_oracle(c: AgreementCounts) -> float:
    m = np.array([[c.yy, c.yn], [c.ny, c.nn]], dtype=float)
    n = m.sum()
    po = np.trace(m) / n
    pe = float((m.sum(axis=1) * m.sum(axis=0)).sum()) / n ** 2
    return (po - pe) / (1 - pe)


counts = st.builds(AgreementCounts, *(st.integers(0, 300) for _ in range(4)))


@given(counts)
def test_kappa_matches_matrix_formula(c):
    if c.total == 0:
        with pytest.raises(ValueError):
            cohens_kappa(c)
        return
    ya, yb = c.yy + c.yn, c.yy + c.ny
    if (ya in (0, c.total)) and (yb in (0, c.total)) and (ya == yb):
        with pytest.raises(ValueError):
            cohens_kappa(c)
        return
    k = cohens_kappa(c)
    assert k == pytest.approx(_kappa_oracle(c), abs=1e-12)
    assert k <= observed_agreement(c) + 1e-12
    assert cohens_kappa(AgreementCounts(c.yy, c.ny, c.yn, c.nn)) == pytest.approx(k, abs=1e-12)


def test_kappa_extremes():
    assert cohens_kappa(AgreementCounts(10, 0, 0, 10)) == 1.0
    assert cohens_kappa(AgreementCounts(0, 10, 10, 0)) == -1.0
    assert cohens_kappa(AgreementCounts(25, 25, 25, 25)) == 0.0


def test_from_pairs():
    pairs = [(True, True)] * 3 + [(True, False)] * 2 + [(False, True)] + [(False, False)] * 4
    assert AgreementCounts.from_pairs(pairs) == AgreementCounts(3, 2, 1, 4)
