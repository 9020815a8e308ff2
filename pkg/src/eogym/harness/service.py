"""Episode service: length-prefixed JSON over TCP plus a small HTTP facade.

Frame format: 4-byte big-endian length, then a UTF-8 JSON object
``{"kind", "session_id", "body"}``. Client kinds are reset, step and final;
the server answers with observation, final or error.
"""

from __future__ import annotations

import itertools
import json
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

from ..episode import EpisodeError, Environment, Session, Task, Trajectory
from ..toolkit.types import ExecutionMode
from .agents import Agent, AgentState, AnswerAction

_LEN = struct.Struct(">I")
MAX_FRAME = 16 * 1024 * 1024


class ProtocolError(Exception):
    code = "protocol"


def send_frame(sock: socket.socket, msg: dict) -> None:
    data = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    sock.sendall(_LEN.pack(len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket) -> dict | None:
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError(f"frame of {n} bytes exceeds limit")
    body = _recv_exact(sock, n)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    msg = json.loads(body.decode("utf-8"))
    if not isinstance(msg, dict):
        raise ProtocolError("frame is not a JSON object")
    return msg


@dataclass
class _Live:
    session: Session
    last_active: float
    last_call_index: int = 0
    lock: threading.Lock = None

    def __post_init__(self):
        self.lock = threading.Lock()


class SessionManager:
    """Routes messages to sessions and persists every closed trajectory exactly once."""

    def __init__(self, env: Environment, persist_path: str | Path | None = None, idle_timeout_s: float = 300.0):
        self.env = env
        self.persist_path = Path(persist_path) if persist_path else None
        self.idle_timeout_s = idle_timeout_s
        self._sessions: dict[str, _Live] = {}
        self._lock = threading.Lock()
        self._file_lock = threading.Lock()
        self._ids = itertools.count(1)
        self.closed: list[Trajectory] = []

    # -- bookkeeping --
    def _persist(self, traj: Trajectory) -> None:
        with self._file_lock:
            self.closed.append(traj)
            if self.persist_path is not None:
                with open(self.persist_path, "a", encoding="utf-8") as fh:
                    fh.write(traj.to_json() + "\n")

    def _close(self, sid: str, live: _Live) -> None:
        with self._lock:
            if self._sessions.pop(sid, None) is None:
                return
        self._persist(live.session.trajectory)

    def reap_idle(self, now: float | None = None) -> list[str]:
        now = time.monotonic() if now is None else now
        with self._lock:
            stale = [(sid, lv) for sid, lv in self._sessions.items() if now - lv.last_active > self.idle_timeout_s]
        for sid, lv in stale:
            with lv.lock:
                lv.session.abort("idle timeout")
            self._close(sid, lv)
        return [sid for sid, _ in stale]

    def abort_all(self, reason: str = "server shutdown") -> None:
        with self._lock:
            items = list(self._sessions.items())
        for sid, lv in items:
            with lv.lock:
                lv.session.abort(reason)
            self._close(sid, lv)

    def active(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)

    # -- message handling --
    @staticmethod
    def _error(sid, code, message) -> dict:
        return {"kind": "error", "session_id": sid, "body": {"code": code, "message": message}}

    def handle(self, msg: dict) -> dict:
        kind, sid, body = msg.get("kind"), msg.get("session_id"), msg.get("body") or {}
        try:
            if kind == "reset":
                return self._reset(sid, body)
            if kind in ("step", "final"):
                with self._lock:
                    live = self._sessions.get(sid)
                if live is None:
                    raise ProtocolError(f"{kind} for unknown or closed session {sid!r}; send reset first")
                with live.lock:
                    live.last_active = time.monotonic()
                    return self._step(sid, live, body) if kind == "step" else self._final(sid, live, body)
            raise ProtocolError(f"unknown message kind {kind!r}")
        except (ProtocolError, EpisodeError) as exc:
            return self._error(sid, exc.code, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return self._error(sid, "bad-request", f"{type(exc).__name__}: {exc}")

    def _reset(self, sid, body) -> dict:
        mode = ExecutionMode.from_dict(body.get("mode") or {})
        session = self.env.reset(body["task_id"], mode, body.get("seed"))
        with self._lock:
            if sid is None:
                sid = f"s{next(self._ids)}"
            if sid in self._sessions:
                raise ProtocolError(f"session {sid!r} already open")
            self._sessions[sid] = _Live(session, time.monotonic())
        return {"kind": "observation", "session_id": sid,
                "body": {"initial": session.initial.to_dict(), "calls_remaining": session.calls_remaining}}

    def _step(self, sid, live: _Live, body) -> dict:
        idx = body.get("call_index")
        if not isinstance(idx, int) or idx <= live.last_call_index:
            live.session.abort("protocol violation")
            self._close(sid, live)
            raise ProtocolError(f"call_index must increase strictly (last {live.last_call_index}, got {idx!r})")
        live.last_call_index = idx
        try:
            res = live.session.step(body["name"], body.get("arguments"), body.get("rationale"))
        except EpisodeError:
            if live.session.trajectory.closed:
                self._close(sid, live)
            raise
        return {"kind": "observation", "session_id": sid,
                "body": {"observation": res.observation.to_dict(), "calls_remaining": res.calls_remaining}}

    def _final(self, sid, live: _Live, body) -> dict:
        traj = live.session.finalize(str(body.get("answer", "")))
        self._close(sid, live)
        return {"kind": "final", "session_id": sid, "body": {"trajectory": traj.to_dict()}}


class _TCPHandler(socketserver.BaseRequestHandler):
    def handle(self):
        manager: SessionManager = self.server.manager
        while True:
            try:
                msg = recv_frame(self.request)
            except (ProtocolError, ValueError) as exc:
                send_frame(self.request, SessionManager._error(None, "protocol", str(exc)))
                return
            except OSError:
                return
            if msg is None:
                return
            send_frame(self.request, manager.handle(msg))


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class _HTTPHandler(BaseHTTPRequestHandler):
    """Chat-tool style facade: sessions, tool_calls and final endpoints."""

    def log_message(self, *args):  # keep test output quiet
        pass

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, sort_keys=True).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        manager: SessionManager = self.server.manager
        try:
            n = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(n) or b"{}")
        except ValueError:
            return self._reply(400, {"error": {"code": "bad-request", "message": "body is not JSON"}})
        parts = [p for p in self.path.split("/") if p]
        if parts[:2] != ["v1", "sessions"]:
            return self._reply(404, {"error": {"code": "not-found", "message": self.path}})
        if len(parts) == 2:
            r = manager.handle({"kind": "reset", "session_id": body.get("session_id"), "body": body})
            if r["kind"] == "error":
                return self._reply(400, {"error": r["body"]})
            init = r["body"]["initial"]
            user = init["question"] + "\nImages: " + ", ".join(init["start_images"])
            return self._reply(200, {"session_id": r["session_id"], "tools": init["tools"],
                                     "messages": [{"role": "system", "content": init["system_prompt"]},
                                                  {"role": "user", "content": user}]})
        sid, action = parts[2], parts[3] if len(parts) > 3 else ""
        if action == "tool_calls":
            out, remaining = [], None
            for tc in body.get("tool_calls", []):
                fn = tc.get("function", {})
                with manager._lock:
                    live = manager._sessions.get(sid)
                idx = (live.last_call_index + 1) if live else 1
                r = manager.handle({"kind": "step", "session_id": sid,
                                    "body": {"call_index": idx, "name": fn.get("name"),
                                             "arguments": fn.get("arguments"), "rationale": body.get("content")}})
                if r["kind"] == "error":
                    return self._reply(409, {"error": r["body"], "messages": out})
                remaining = r["body"]["calls_remaining"]
                out.append({"role": "tool", "tool_call_id": tc.get("id"),
                            "content": json.dumps(r["body"]["observation"], sort_keys=True)})
            return self._reply(200, {"messages": out, "calls_remaining": remaining})
        if action == "final":
            r = manager.handle({"kind": "final", "session_id": sid, "body": {"answer": body.get("content", "")}})
            if r["kind"] == "error":
                return self._reply(409, {"error": r["body"]})
            return self._reply(200, r["body"])
        return self._reply(404, {"error": {"code": "not-found", "message": self.path}})


class ServiceHandle:
    def __init__(self, manager, tcp, http, reaper_stop):
        self.manager = manager
        self._tcp, self._http, self._stop = tcp, http, reaper_stop

    @property
    def tcp_address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    @property
    def http_address(self) -> tuple[str, int] | None:
        return self._http.server_address[:2] if self._http else None

    def shutdown(self) -> None:
        self._stop.set()
        for srv in (self._tcp, self._http):
            if srv is not None:
                srv.shutdown()
                srv.server_close()
        self.manager.abort_all()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve(env: Environment, host: str = "127.0.0.1", port: int = 0, http_port: int | None = 0,
          persist_path: str | Path | None = None, idle_timeout_s: float = 300.0,
          reap_interval_s: float = 1.0) -> ServiceHandle:
    """Start TCP (and optionally HTTP) listeners in background threads. Port 0 picks a free port."""
    manager = SessionManager(env, persist_path, idle_timeout_s)
    tcp = _TCPServer((host, port), _TCPHandler)
    tcp.manager = manager
    threading.Thread(target=tcp.serve_forever, daemon=True).start()
    http = None
    if http_port is not None:
        http = ThreadingHTTPServer((host, http_port), _HTTPHandler)
        http.daemon_threads = True
        http.manager = manager
        threading.Thread(target=http.serve_forever, daemon=True).start()
    stop = threading.Event()

    def reaper():
        while not stop.wait(reap_interval_s):
            manager.reap_idle()

    threading.Thread(target=reaper, daemon=True).start()
    return ServiceHandle(manager, tcp, http, stop)


class EpisodeClient:
    """Blocking TCP client; one connection can drive several sessions."""

    def __init__(self, host: str, port: int, timeout_s: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, kind: str, session_id: str | None, body: dict) -> dict:
        send_frame(self.sock, {"kind": kind, "session_id": session_id, "body": body})
        reply = recv_frame(self.sock)
        if reply is None:
            raise ConnectionError("server closed the connection")
        return reply

    def reset(self, task_id: str, mode: ExecutionMode = ExecutionMode(), seed: int | None = None,
              session_id: str | None = None) -> dict:
        return self.request("reset", session_id, {"task_id": task_id, "mode": mode.to_dict(), "seed": seed})

    def step(self, session_id: str, call_index: int, name: str, arguments: Any, rationale: str | None = None) -> dict:
        return self.request("step", session_id, {"call_index": call_index, "name": name, "arguments": arguments,
                                                 "rationale": rationale})

    def final(self, session_id: str, answer: str) -> dict:
        return self.request("final", session_id, {"answer": answer})


def run_remote_attempt(client: EpisodeClient, task: Task, agent: Agent, mode: ExecutionMode, seed: int,
                       attempt: int = 0) -> Trajectory:
    """Same loop as the in-process runner, but every call goes over the wire."""
    from ..episode import InitialObservation
    from ..toolkit.types import Observation
    from .runner import attempt_seed

    s = attempt_seed(seed, task.task_id, attempt)
    mode = ExecutionMode.from_dict({**mode.to_dict(), "seed": s})
    r = client.reset(task.task_id, mode, s)
    if r["kind"] == "error":
        raise RuntimeError(r["body"])
    sid = r["session_id"]
    init = r["body"]["initial"]
    state = AgentState(task, InitialObservation(init["system_prompt"], init["question"], tuple(init["start_images"]),
                                                tuple(init["tools"])), s, attempt)
    while True:
        action = agent.act(state)
        if isinstance(action, AnswerAction):
            r = client.final(sid, action.text)
            return Trajectory.from_dict(r["body"]["trajectory"])
        r = client.step(sid, len(state.calls) + 1, action.name, action.arguments, action.rationale)
        if r["kind"] == "error":
            raise RuntimeError(r["body"])
        state.calls.append(action)
        state.observations.append(Observation.from_dict(r["body"]["observation"]))
