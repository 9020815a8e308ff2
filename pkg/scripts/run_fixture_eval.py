"""Generate the fixture corpus and evaluate every scripted agent on it.

    python scripts/run_fixture_eval.py --out runs/fixture --k 3
"""

import argparse
import json
from pathlib import Path

from eogym.harness.agents import POLICIES, make_agent
from eogym.harness.fixtures import FixtureSpec, gen_fixtures
from eogym.harness.runner import load_environment, run_eval
from eogym.toolkit.types import ExecutionMode


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/fixture")
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--response", choices=["verified", "unverified"], default="verified")
    ap.add_argument("--prompt", choices=["simple", "detailed"], default="simple")
    args = ap.parse_args()

    out = Path(args.out)
    gen_fixtures(FixtureSpec(), out / "fixtures")
    env = load_environment(out / "fixtures")
    tasks = list(env.tasks.values())
    mode = ExecutionMode(response=args.response, prompt=args.prompt)
    summary = {}
    for policy in POLICIES:
        run = run_eval(env, tasks, make_agent(policy), mode, args.k, args.seed, out_dir=out / policy)
        rep = run.report
        summary[policy] = {f"pass@{k}": round(v["value"], 4) for k, v in sorted(rep.pass_at_k.items())}
        summary[policy]["zero_call_rate"] = round(rep.diagnostics.zero_call_rate, 4)
        summary[policy]["seconds"] = round(run.elapsed_s, 2)
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
