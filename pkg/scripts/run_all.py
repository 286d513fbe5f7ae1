"""Run every scenario at its reference configuration and print the failing checks.

Usage: python3 scripts/run_all.py [OUT_DIR] [--workers N]
"""

import argparse
import time

from tolab.experiments import SCENARIOS, ScenarioConfig, default_config, run_scenario

# scenario runs beyond the defaults that the acceptance suite also exercises
EXTRA = [("E1", -0.5), ("E1", 0.5), ("E2", 0.5), ("E3", -0.5), ("E3", 0.5), ("E5", 0.5)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", nargs="?", default="tol_out/all")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    runs = [(s, None) for s in SCENARIOS] + EXTRA
    failed = 0
    for sid, a in runs:
        base = default_config(sid, a=a)
        tag = sid if a is None else f"{sid}_a{a:+g}"
        cfg = ScenarioConfig(sid, base.problem, base.ladder, base.params, f"{args.out}/{tag}",
                             base.seed, base.solve, args.workers)
        t0 = time.perf_counter()
        rep = run_scenario(cfg)
        status = "pass" if rep.passed else "FAIL"
        print(f"{tag:10s} {status}  {len(rep.checks)} checks  {time.perf_counter() - t0:6.1f}s")
        for c in rep.failures():
            print("    " + c.line())
        failed += not rep.passed
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
