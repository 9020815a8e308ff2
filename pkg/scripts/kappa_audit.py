"""Agreement and Cohen's kappa between a judge and human labels.

Either pass the four cell counts directly:

    python scripts/kappa_audit.py --counts 263 20 26 291

or a JSONL file of ``{"judge": bool, "human": bool}`` rows:

    python scripts/kappa_audit.py --pairs labels.jsonl
"""

import argparse
import json

from eogym.judge import AgreementCounts, cohens_kappa, observed_agreement


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    g = ap.add_mutually_exclusive_group(required=True)
    g.add_argument("--counts", type=int, nargs=4, metavar=("YY", "YN", "NY", "NN"))
    g.add_argument("--pairs")
    args = ap.parse_args()

    if args.counts:
        c = AgreementCounts(*args.counts)
    else:
        with open(args.pairs) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        c = AgreementCounts.from_pairs((r["judge"], r["human"]) for r in rows)
    print(json.dumps({"n": c.total, "agreement": round(observed_agreement(c), 4),
                      "kappa": round(cohens_kappa(c), 4)}, indent=2))


if __name__ == "__main__":
    main()
