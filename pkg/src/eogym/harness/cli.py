"""Command line entry point.

Errors go to stderr as one JSON object per line with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

from ..datalake import IndexBuildError, build_index
from ..episode import canonical_steps, load_tasks, read_trajectories, validate_structure
from ..judge import make_judge
from ..metrics import build_report
from ..toolkit.types import ExecutionMode
from .agents import POLICIES, make_agent
from .fixtures import FixtureSpec, gen_fixtures
from .runner import load_environment, results_from_trajectories, run_attempt, run_eval, write_report


class CLIError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = 2):
        super().__init__(message)
        self.code, self.message, self.exit_code = code, message, exit_code


@dataclass
class RunConfig:
    """Settings shared by the run-style commands; a JSON config file can supply any of them."""

    response: str = "verified"
    prompt: str = "simple"
    schema_set: str = "skill"
    rename: bool = False
    seed: int = 0
    k: int = 3
    budget: int = 15
    judge: str = "exact"
    judge_url: str | None = None
    judge_model: str | None = None
    bootstrap: int = 1000
    early_stop: bool = True

    def mode(self) -> ExecutionMode:
        return ExecutionMode(self.response, self.prompt, self.schema_set, self.rename, self.seed)

    def judge_backend(self):
        return make_judge(self.judge, base_url=self.judge_url, model=self.judge_model) if self.judge == "remote" \
            else make_judge(self.judge)


def load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise CLIError("config", f"unknown config keys: {unknown}")
        for k, v in data.items():
            setattr(cfg, k, v)
    for name in ("response", "prompt", "schema_set", "seed", "k", "budget", "judge", "judge_url", "judge_model",
                 "bootstrap"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    if getattr(args, "rename", None):
        cfg.rename = True
    if getattr(args, "no_early_stop", None):
        cfg.early_stop = False
    return cfg


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def cmd_index(args) -> int:
    try:
        index = build_index(args.manifest, args.root, strict=args.strict)
    except IndexBuildError as exc:
        raise CLIError("index-invalid", f"{len(exc.violations)} violation(s): "
                       + "; ".join(f"{v.record_id}:{v.code}" for v in exc.violations), 1) from None
    _emit({"counts": index.counts(), "records": len(index),
           "violations": [{"record_id": v.record_id, "code": v.code, "detail": v.detail} for v in index.violations]})
    return 1 if index.violations and args.strict else 0


def cmd_fixtures(args) -> int:
    spec = FixtureSpec(seed=args.seed) if args.seed is not None else FixtureSpec()
    _emit(gen_fixtures(spec, args.out))
    return 0


def _env_and_tasks(args, cfg: RunConfig):
    env = load_environment(args.fixtures, budget=cfg.budget)
    tasks = list(env.tasks.values())
    if getattr(args, "task", None):
        wanted = set(args.task)
        tasks = [t for t in tasks if t.task_id in wanted]
        if not tasks:
            raise CLIError("unknown-task", f"no tasks match {sorted(wanted)}")
    return env, tasks


def cmd_serve(args) -> int:
    from .service import serve
    cfg = load_config(args)
    env, _ = _env_and_tasks(args, cfg)
    handle = serve(env, args.host, args.port, args.http_port, args.persist, args.idle_timeout)
    print(json.dumps({"tcp": list(handle.tcp_address),
                      "http": list(handle.http_address) if handle.http_address else None}), flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.shutdown()
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args)
    env, tasks = _env_and_tasks(args, cfg)
    run = run_eval(env, tasks, make_agent(args.agent), cfg.mode(), cfg.k, cfg.seed, cfg.judge_backend(),
                   cfg.early_stop, args.out, cfg.bootstrap)
    sys.stdout.write(run.report.to_table())
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args)
    path = Path(args.trajectories)
    if not path.exists() or not path.read_text().strip():
        raise CLIError("empty-input", f"no trajectories in {path}")
    judge = cfg.judge_backend()
    results = results_from_trajectories(read_trajectories(path), load_tasks(args.tasks), judge, cfg.early_stop)
    report = build_report(results, ks=range(1, cfg.k + 1), seed=cfg.seed, B=cfg.bootstrap, judge=judge)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_report(report, args.out)
    sys.stdout.write(report.to_json() if args.format == "json" else
                     report.to_csv() if args.format == "csv" else report.to_table())
    return 0


def cmd_synthcheck(args) -> int:
    path = Path(args.trajectories)
    if not path.exists() or not path.read_text().strip():
        raise CLIError("empty-input", f"no trajectories in {path}")
    trajs = read_trajectories(path)
    families = {}
    if args.tasks:
        families = {t.task_id: t.dataset_family for t in load_tasks(args.tasks)}
    reports = [validate_structure(t, families.get(t.task_id)) for t in trajs]
    cats: dict[str, int] = {}
    for r in reports:
        for c in r.categories:
            cats[c] = cats.get(c, 0) + 1
    summary = {"trajectories": len(reports), "valid": sum(r.valid for r in reports),
               "invalid": [r.to_dict() for r in reports if not r.valid], "categories": cats,
               "over_budget": sum(len(t.steps) > t.budget for t in trajs)}
    _emit(summary)
    return 0 if summary["valid"] == len(reports) else 1


def cmd_rename_audit(args) -> int:
    cfg = load_config(args)
    env, tasks = _env_and_tasks(args, cfg)
    agent = make_agent(args.agent)
    diffs = []
    base = cfg.mode()
    for task in tasks:
        for a in range(cfg.k):
            off = run_attempt(env, task, agent, ExecutionMode.from_dict({**base.to_dict(), "rename": False}),
                              cfg.seed, a)
            on = run_attempt(env, task, agent, ExecutionMode.from_dict({**base.to_dict(), "rename": True}),
                             cfg.seed, a)
            if canonical_steps(off) != canonical_steps(on) or off.final_answer != on.final_answer:
                diffs.append({"task_id": task.task_id, "attempt": a})
    _emit({"agent": args.agent, "tasks": len(tasks), "attempts": len(tasks) * cfg.k, "diffs": diffs})
    return 0 if not diffs else 1


def _mode_flags(p):
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--response", choices=["verified", "unverified"])
    p.add_argument("--prompt", choices=["simple", "detailed"])
    p.add_argument("--schema-set", dest="schema_set", choices=["skill", "all"])
    p.add_argument("--rename", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--judge", choices=["exact", "remote"])
    p.add_argument("--judge-url", dest="judge_url")
    p.add_argument("--judge-model", dest="judge_model")
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--no-early-stop", dest="no_early_stop", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eogym", description="Earth-observation tool-use environment")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and validate a manifest")
    p.add_argument("manifest")
    p.add_argument("--root")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("fixtures", help="generate the synthetic fixture corpus")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_fixtures)

    p = sub.add_parser("serve", help="serve episodes over TCP and HTTP")
    p.add_argument("fixtures")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7411)
    p.add_argument("--http-port", dest="http_port", type=int, default=7412)
    p.add_argument("--persist", default="served_trajectories.jsonl")
    p.add_argument("--idle-timeout", dest="idle_timeout", type=float, default=300.0)
    _mode_flags(p)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("run", help="run a scripted agent over the fixture tasks")
    p.add_argument("fixtures")
    p.add_argument("--agent", choices=POLICIES, default="optimal")
    p.add_argument("--task", action="append")
    p.add_argument("--out")
    _mode_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="report from stored trajectories")
    p.add_argument("trajectories")
    p.add_argument("tasks")
    p.add_argument("--out")
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    _mode_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synthcheck", help="structural validation of a trajectory file")
    p.add_argument("trajectories")
    p.add_argument("--tasks")
    p.set_defaults(fn=cmd_synthcheck)

    p = sub.add_parser("rename-audit", help="compare runs with and without tool renaming")
    p.add_argument("fixtures")
    p.add_argument("--agent", choices=POLICIES, default="optimal")
    p.add_argument("--task", action="append")
    _mode_flags(p)
    p.set_defaults(fn=cmd_rename_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CLIError as exc:
        sys.stderr.write(json.dumps({"error": exc.code, "message": exc.message}) + "\n")
        return exc.exit_code
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
