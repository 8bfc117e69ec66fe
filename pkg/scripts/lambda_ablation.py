#!/usr/bin/env python
"""
Deletion AUC for several cumulating factors on redundant planted oracles.

Each configuration is rolled out once with an ε-reference policy; the
same trace is turned into one map per λ, and a one-sided paired t-test
checks whether λ=1 beats λ=0.
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from rexl.experiments import run_lambda_ablation
from rexl.metrics import format_table


def main():
    parser = argparse.ArgumentParser(description="Cumulating-factor ablation on planted oracles")
    parser.add_argument("--n", type=int, default=50, help="Configurations (default: 50)")
    parser.add_argument(
        "--lambdas",
        nargs="+",
        type=float,
        default=[0.0, 0.7, 0.8, 1.0],
        help="λ values (default: 0 0.7 0.8 1)",
    )
    parser.add_argument("--epsilon", type=float, default=0.5, help="Exploration rate (default: 0.5)")
    parser.add_argument("--size", type=int, default=56, help="Image side in pixels (default: 56)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", help="Write the per-configuration table to this CSV")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    result = run_lambda_ablation(
        args.n, args.lambdas, epsilon=args.epsilon, size=args.size, seed=args.seed
    )

    print("=" * 60)
    print("DELETION AUC BY LAMBDA (lower is better)")
    print("=" * 60)
    print(format_table(result.summary()))
    if 0.0 in args.lambdas and 1.0 in args.lambdas:
        statistic, pvalue = result.paired_test(1.0, 0.0)
        print(f"\nPaired t-test λ=1 < λ=0: t = {statistic:.3f}, p = {pvalue:.3g}")
    if args.csv:
        result.table.to_csv(args.csv, index=False)
        print(f"Per-configuration table written to {args.csv}")


if __name__ == "__main__":
    main()
