"""Target-to-label matching used by ground-truth-backed detection."""

from __future__ import annotations

import re
from collections import defaultdict
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol

_ALL_TARGETS = {"object", "all", "everything", "any object"}


def normalize_label(text: str) -> str:
    s = re.sub(r"[_\-/]+", " ", text.strip().lower())
    s = re.sub(r"[^a-z0-9 ]+", "", s)
    s = re.sub(r"\s+", " ", s).strip()
    return _singular(s)


def _singular(phrase: str) -> str:
    words = phrase.split(" ")
    w = words[-1]
    if len(w) > 3 and w.endswith("ies"):
        w = w[:-3] + "y"
    elif len(w) > 3 and w.endswith(("ches", "shes", "sses", "xes")):
        w = w[:-2]
    elif len(w) > 2 and w.endswith("s") and not w.endswith("ss"):
        w = w[:-1]
    words[-1] = w
    return " ".join(words)


def load_synonym_table(path: str | Path | None = None) -> dict[str, frozenset[str]]:
    """Parse ``term: narrower, narrower`` lines into a transitive hyponym map."""
    if path is None:
        text = resources.files("eogym.data").joinpath("synonyms.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    direct: dict[str, set[str]] = defaultdict(set)
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line or ":" not in line:
            continue
        head, _, tail = line.partition(":")
        direct[normalize_label(head)].update(normalize_label(t) for t in tail.split(",") if t.strip())
    closed: dict[str, frozenset[str]] = {}
    for term in direct:
        seen: set[str] = set()
        stack = [term]
        while stack:
            for child in direct.get(stack.pop(), ()):
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        closed[term] = frozenset(seen)
    return closed


class TargetFilter(Protocol):
    def __call__(self, target: str, labels: Iterable[str]) -> set[str]: ...


class SynonymFilter:
    """Deterministic filter: normalized string match plus the hypernym table."""

    def __init__(self, table: dict[str, frozenset[str]] | None = None):
        self.table = load_synonym_table() if table is None else table

    def __call__(self, target: str, labels: Iterable[str]) -> set[str]:
        t = normalize_label(target)
        labels = set(labels)
        if t in _ALL_TARGETS:
            return labels
        wanted = {t} | set(self.table.get(t, ()))
        return {lab for lab in labels if normalize_label(lab) in wanted}


_default_filter: SynonymFilter | None = None


def semantic_target_filter(target: str, labels: Iterable[str], backend: TargetFilter | None = None) -> set[str]:
    global _default_filter
    if backend is None:
        if _default_filter is None:
            _default_filter = SynonymFilter()
        backend = _default_filter
    return backend(target, labels)
