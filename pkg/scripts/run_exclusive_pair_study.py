#!/usr/bin/env python3
"""How an exclusive buyer-item pair fares against a fully connected block.

Builds the hand-shaped market where one buyer values exactly one item (and is
that item's only suitor) while every other buyer values every remaining item,
then solves the surplus program under unit and demand-proportional budgets
across a ladder of demand levels.  Under unit budgets the block equalizes
surplus and the decoupled buyer keeps whatever its private item yields; under
demand-proportional budgets the block equalizes value-to-demand ratios.  The
table prints both sides so the gap is visible, and every solve is audited.

Example:
    python3 scripts/run_exclusive_pair_study.py --buyers 8 --items 6 \
        --demands 0.1 0.2 0.4 --seed 2
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from fairwork import run_all_audits, solve_eg_demand, surplus_per_period
from fairwork.scenarios import exclusive_pair_market


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--buyers", type=int, default=6)
    ap.add_argument("--items", type=int, default=5)
    ap.add_argument("--periods", type=int, default=1)
    ap.add_argument(
        "--demands", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3],
        help="per-buyer demand levels to scan",
    )
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args(argv)


def block_and_lone(inst, x) -> tuple[np.ndarray, float]:
    surpluses = surplus_per_period(inst, x).sum(axis=1)
    return surpluses[:-1], float(surpluses[-1])


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    print(
        f"market: {args.buyers} buyers x {args.items} items x {args.periods} periods "
        f"(last buyer exclusively paired with the last item)"
    )
    header = (
        f"{'demand':>7} {'budgets':<8} {'block surplus':>14} {'spread':>9} "
        f"{'lone surplus':>13} {'gap':>9} {'audits':>7}"
    )
    print(header)
    print("-" * len(header))
    all_passed = True
    for demand in args.demands:
        for mode in ("unit", "equal-to-demand"):
            inst = exclusive_pair_market(
                args.buyers,
                args.items,
                periods=args.periods,
                demand=demand,
                include_zero_demand=mode == "unit",
                budget_mode=mode,
            )
            report = solve_eg_demand(inst)
            block, lone = block_and_lone(inst, report.x)
            audit = run_all_audits(report)
            all_passed &= audit.passed
            label = "unit" if mode == "unit" else "demand"
            print(
                f"{demand:>7g} {label:<8} {block.mean():>14.6f} "
                f"{block.max() - block.min():>9.2e} {lone:>13.6f} "
                f"{lone - block.mean():>+9.4f} {'pass' if audit.passed else 'FAIL':>7}"
            )
    if not all_passed:
        print("\nsome audits failed; inspect the reports above")
        return 1
    print("\nall solves audited clean; block spread stays at solver precision "
          "while the decoupled buyer moves with its private supply")
    return 0


if __name__ == "__main__":
    sys.exit(main())
