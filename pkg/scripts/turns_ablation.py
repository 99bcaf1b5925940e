#!/usr/bin/env python3
"""Turns-to-success ablation across memory modes on the clutter suite.

Writes the structured report to stdout and an optional box plot. Equivalent
to `soma bench-turns`, kept here as a direct experiment entry point.
"""

from __future__ import annotations

import argparse
import sys

from soma.bench import MEMORY_MODES, bench_turns
from soma.config import LoopConfig
from soma.serde import canon_line
from soma.suites import BENCH_SEEDS


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=50)
    parser.add_argument("--seed-base", type=int, default=BENCH_SEEDS[0])
    parser.add_argument("--modes", default=",".join(MEMORY_MODES))
    parser.add_argument("--plot", help="write a box plot of turn distributions")
    args = parser.parse_args()

    modes = [m for m in args.modes.split(",") if m]
    report = bench_turns(modes, args.episodes, args.seed_base, config=LoopConfig())
    sys.stdout.write(canon_line(report))
    for row in report["rows"]:
        print(f"{row['mode']:>14}  mean={row['mean_turns']:<8} var={row['variance']}",
              file=sys.stderr)
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        ax.boxplot([row["turns"] for row in report["rows"]],
                   tick_labels=[row["mode"] for row in report["rows"]])
        ax.set_ylabel("turns to success")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
