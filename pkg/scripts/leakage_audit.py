"""Nearest-train distance for every geolocated test record of a manifest.

    python scripts/leakage_audit.py manifest.jsonl --train train_ids.txt --test test_ids.txt

Without id files the records are split by a seeded shuffle (``--test-frac``).
"""

import argparse
import json

import numpy as np

from eogym.datalake import build_index, leakage_audit


def _ids(path):
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest")
    ap.add_argument("--train")
    ap.add_argument("--test")
    ap.add_argument("--test-frac", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    index = build_index(args.manifest)
    if args.train and args.test:
        train, test = _ids(args.train), _ids(args.test)
    else:
        ids = sorted(index.records)
        np.random.default_rng(args.seed).shuffle(ids)
        cut = max(1, int(round(len(ids) * args.test_frac)))
        test, train = ids[:cut], ids[cut:]
    audit = leakage_audit(index, train, test)
    print(json.dumps({"n_train": audit.n_train, "n_test": audit.n_test, "median_km": audit.median_km,
                      "p90_km": audit.p90_km, "frac_within_1km": audit.frac_within_1km}, indent=2))


if __name__ == "__main__":
    main()
