#!/usr/bin/env python3
"""Run every attack scenario over a range of seeds and print a summary grid.

    python scripts/run_scenarios.py --seeds 1-5 [--over-http] [--json out.json]
"""
import argparse
import json
import sys
import time

from appt.harness import ALL_DENY_REASONS, list_scenarios, run_scenario, scenario_passed


def seed_range(text: str) -> range:
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=seed_range, default=seed_range("1-5"))
    ap.add_argument("--over-http", action="store_true", help="drive the service through loopback sockets")
    ap.add_argument("--json", metavar="PATH", help="also write every report as JSON")
    args = ap.parse_args(argv)

    reports, covered, failures = [], set(), 0
    started = time.monotonic()
    print(f"{'scenario':<26} {'seed':>4}  {'verdict':<15} attacker denials")
    for name, _ in list_scenarios():
        for seed in args.seeds:
            report = run_scenario(name, seed, over_http=args.over_http)
            ok = scenario_passed(report)
            failures += not ok
            covered |= report.denied_reasons()
            reports.append(report.to_json())
            denials = sorted(report.denied_reasons()) or ["-"]
            flag = "" if ok else "  <-- FAILED"
            print(f"{name:<26} {seed:>4}  {report.verdict.value:<15} {', '.join(denials)}{flag}")

    missing = sorted(ALL_DENY_REASONS - covered)
    print(f"\n{len(reports)} runs, {failures} failed, {len(covered)}/{len(ALL_DENY_REASONS)} denial reasons "
          f"covered, {time.monotonic() - started:.1f} s")
    if missing:
        print("never observed: " + ", ".join(missing))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(reports, fh, indent=2)
    return 1 if failures or missing else 0


if __name__ == "__main__":
    sys.exit(main())
