"""Run one scenario and print every check.

Usage: python3 scripts/run_scenario.py E6 [--a -0.5] [--ladder 64 128] [--out DIR]
"""

import argparse
import dataclasses

from tolab.experiments import SCENARIOS, default_config, run_scenario
from tolab.io import dumps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--a", type=float)
    ap.add_argument("--ladder", type=int, nargs="+")
    ap.add_argument("--out", default=None)
    ap.add_argument("--runs", action="store_true", help="also print the per-run metrics")
    args = ap.parse_args()
    cfg = default_config(args.scenario, a=args.a, ladder=args.ladder)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    rep = run_scenario(cfg)
    for c in rep.checks:
        print(c.line())
    if args.runs:
        print(dumps(rep.runs))
    print(f"{args.scenario}: {'pass' if rep.passed else 'FAIL'} (config {rep.config_hash})")
    raise SystemExit(0 if rep.passed else 1)


if __name__ == "__main__":
    main()
