#!/usr/bin/env python3
"""Baseline vs closed-loop success rate for each of the five failure modes.

The baseline is one unassisted attempt by the frozen policy; the loop runs
with cold-started memory, full retrieval, and per-episode consolidation.
"""

from __future__ import annotations

import argparse
import sys

from soma.bench import cold_start, mode_lift
from soma.config import LoopConfig
from soma.serde import canon_line
from soma.suites import MODE_SEEDS

MODES = ("visual_focus", "clutter", "noisy_prompt", "fragility", "chaining")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=len(MODE_SEEDS))
    parser.add_argument("--seed-base", type=int, default=MODE_SEEDS[0])
    parser.add_argument("--plot", help="write a grouped bar chart")
    args = parser.parse_args()

    seeds = range(args.seed_base, args.seed_base + args.episodes)
    config = LoopConfig()
    cold = cold_start(config)
    rows = [mode_lift(mode, seeds, config, cold=cold) for mode in MODES]
    sys.stdout.write(canon_line({"episodes": args.episodes, "rows": rows}))
    for row in rows:
        print(f"{row['mode']:>14}  baseline={row['baseline_rate']:.3f}  "
              f"loop={row['loop_rate']:.3f}", file=sys.stderr)
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4))
        x = range(len(rows))
        ax.bar([i - 0.2 for i in x], [r["baseline_rate"] for r in rows],
               width=0.4, label="frozen policy")
        ax.bar([i + 0.2 for i in x], [r["loop_rate"] for r in rows],
               width=0.4, label="with loop")
        ax.set_xticks(list(x), [r["mode"] for r in rows], rotation=20)
        ax.set_ylabel("success rate")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
