"""Calls, observations and execution-mode settings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Any, Mapping

STATUSES = ("ok", "empty", "error")


class ToolError(Exception):
    """Raised inside tool implementations; turned into an error Observation."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code
        self.message = message or code


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Any  # mapping, or the raw text an agent sent
    call_index: int = 0
    rationale: str | None = None

    def parsed_arguments(self) -> dict:
        """Arguments as a dict; raises ToolError('illegal-arguments') otherwise."""
        args = self.arguments
        if isinstance(args, (str, bytes)):
            try:
                args = json.loads(args) if args.strip() else {}
            except ValueError as exc:
                raise ToolError("illegal-arguments", f"arguments are not valid JSON: {exc}") from None
        if args is None:
            return {}
        if not isinstance(args, Mapping):
            raise ToolError("illegal-arguments", "arguments must be a JSON object")
        return dict(args)

    @property
    def payload_valid(self) -> bool:
        try:
            self.parsed_arguments()
            return True
        except ToolError:
            return False

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": self.arguments, "call_index": self.call_index,
                "rationale": self.rationale}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToolCall":
        return cls(d["name"], d.get("arguments"), int(d.get("call_index", 0)), d.get("rationale"))


@dataclass(frozen=True)
class Observation:
    status: str
    kind: str | None = None  # patch | scene | records | boxes | mask | index_stats | relation | text | scalar
    payload: Any = None
    message: str = ""
    error_code: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad observation status {self.status!r}")
        if self.status == "error" and not self.error_code:
            raise ValueError("error observations need an error_code")
        if self.status == "empty" and self.payload is not None:
            raise ValueError("empty observations carry no payload")

    @classmethod
    def ok(cls, kind: str, payload: Any, message: str = "") -> "Observation":
        return cls("ok", kind, payload, message)

    @classmethod
    def empty(cls, kind: str, message: str = "") -> "Observation":
        return cls("empty", kind, None, message)

    @classmethod
    def error(cls, code: str, message: str = "") -> "Observation":
        return cls("error", None, None, message or code, code)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Observation":
        return cls(d["status"], d.get("kind"), d.get("payload"), d.get("message", ""), d.get("error_code"))

    def to_text(self) -> str:
        """Compact JSON used as the tool-message content on the wire."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class NoiseConfig:
    """Seeded noisy-oracle detector settings for unverified mode."""

    jitter_px: float = 2.0
    drop_prob: float = 0.15
    fp_rate: float = 0.1


@dataclass(frozen=True)
class ExecutionMode:
    response: str = "verified"  # verified | unverified
    prompt: str = "simple"  # simple | detailed
    schema_set: str = "skill"  # skill | all
    rename: bool = False
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        if self.response not in ("verified", "unverified"):
            raise ValueError(f"response mode must be verified|unverified, got {self.response!r}")
        if self.prompt not in ("simple", "detailed"):
            raise ValueError(f"prompt must be simple|detailed, got {self.prompt!r}")
        if self.schema_set not in ("skill", "all"):
            raise ValueError(f"schema_set must be skill|all, got {self.schema_set!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExecutionMode":
        d = dict(d)
        noise = NoiseConfig(**d.pop("noise", {}) or {})
        return cls(noise=noise, **d)


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1
