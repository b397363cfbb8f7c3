#!/usr/bin/env python3
"""Per-position chi-square test of the OTP generator.

Expected symbol frequencies are not flat: requiring one character from every
class over-weights the small classes. The exact marginals come from
inclusion-exclusion over the classes a string could be missing.

    python scripts/otp_uniformity.py --samples 100000 --seed 20240601
"""
import argparse
import itertools
import random
import sys
from collections import Counter

from scipy.stats import chisquare

from appt.otp import CHARACTER_CLASSES, OtpPolicy, generate_otp


def admissible(sizes, length, pinned=None):
    others = [c for c in range(len(sizes)) if c != pinned]
    free = length - (pinned is not None)
    n = sum(sizes)
    return sum((-1) ** r * (n - sum(sizes[c] for c in sub)) ** free
               for r in range(len(others) + 1) for sub in itertools.combinations(others, r))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="OTP chi-square uniformity check")
    ap.add_argument("--samples", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--alpha", type=float, default=0.001)
    args = ap.parse_args(argv)

    policy = OtpPolicy()
    sizes = [len(CHARACTER_CLASSES[c]) for c in policy.ordered_classes]
    total = admissible(sizes, policy.length)
    per_symbol = []
    for idx, size in enumerate(sizes):
        per_symbol += [admissible(sizes, policy.length, idx) / total] * size

    rng = random.Random(args.seed)
    samples = [generate_otp(policy, rng) for _ in range(args.samples)]
    expected = [p * args.samples for p in per_symbol]
    worst = 1.0
    print(f"{total} admissible codes, alphabet of {len(per_symbol)}, {args.samples} samples")
    for pos in range(policy.length):
        counts = Counter(s[pos] for s in samples)
        res = chisquare([counts[ch] for ch in policy.alphabet], expected)
        worst = min(worst, res.pvalue)
        print(f"position {pos}: chi2={res.statistic:8.2f}  p={res.pvalue:.4f}")
    dupes = len(samples) - len(set(samples))
    print(f"min p={worst:.4f} (alpha {args.alpha}), duplicates among samples: {dupes}")
    return 0 if worst > args.alpha else 1


if __name__ == "__main__":
    sys.exit(main())
