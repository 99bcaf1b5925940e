"""Operator entry points.

Subcommands: run (one episode), bench-turns (turns-to-success ablation),
inspect (memory contents), consolidate (offline stage over stored
trajectories), serve-tools (the tool-protocol server).

Exit codes: 0 success, 2 task failure, 3 system error, 64 usage error.
Structured records go to stdout as canonical JSON lines; human-readable
summaries go to stderr, so repeated runs with the same seed produce
byte-identical stdout.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import MEMORY_MODES, bench_turns, _partition_gates
from .config import LoopConfig
from .consolidation import TrajectoryStore, consolidate_trajectory, mem_consol
from .errors import SomaError
from .memory import MemoryBank
from .orchestrator import run_episode
from .reasoner import build_reasoner
from .serde import canon_line
from .server import ToolProtocolServer
from .simenv import ScriptedPolicy, TabletopEnv
from .suites import SCENARIO_NAMES, spec_for

EXIT_OK = 0
EXIT_TASK_FAILURE = 2
EXIT_SYSTEM = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="soma")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario end to end")
    run.add_argument("--scenario", required=True, choices=SCENARIO_NAMES)
    run.add_argument("--seed", type=int, required=True)
    run.add_argument("--memory", required=True, help="memory bank directory")
    run.add_argument("--reasoner", default="rules", choices=("rules", "null", "remote"))
    run.add_argument("--memory-mode", default="dual", choices=MEMORY_MODES)
    run.add_argument("--init-memory", action="store_true",
                     help="create the memory directory if missing")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--out", help="also write the episode report here")
    run.add_argument("--trajectory-dir", help="persist the trajectory record here")

    bench = sub.add_parser("bench-turns", help="turns-to-success ablation")
    bench.add_argument("--suite", default="clutter", choices=SCENARIO_NAMES)
    bench.add_argument("--episodes", type=int, default=50)
    bench.add_argument("--seed-base", type=int, default=1000)
    bench.add_argument("--modes", default="none,failure_only,success_only,dual")
    bench.add_argument("--config", help="JSON config file")
    bench.add_argument("--out", help="also write the bench report here")
    bench.add_argument("--plot", help="write a turns-distribution plot (PNG)")

    inspect = sub.add_parser("inspect", help="print memory bank contents")
    inspect.add_argument("--memory", required=True)
    inspect.add_argument("--partition", choices=("success", "failure"))
    inspect.add_argument("--category")

    consolidate = sub.add_parser("consolidate", help="offline consolidation stage")
    consolidate.add_argument("--memory", required=True)
    consolidate.add_argument("--top-n", type=int, default=3)
    consolidate.add_argument("--trajectories", help="directory of trajectory records")
    consolidate.add_argument("--config", help="JSON config file")

    serve = sub.add_parser("serve-tools", help="serve the tool protocol")
    serve.add_argument("--port", type=int, help="TCP port (default: stdio)")
    serve.add_argument("--host", default="127.0.0.1")

    return parser


def _load_config(path: str | None) -> LoopConfig:
    return LoopConfig.from_file(path) if path else LoopConfig()


def _emit(record: dict, out: str | None) -> None:
    line = canon_line(record)
    sys.stdout.write(line)
    if out:
        Path(out).write_text(line)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    memory_dir = Path(args.memory)
    if not (memory_dir / "manifest").exists():
        if not args.init_memory:
            print(f"error: no memory bank at {memory_dir} (use --init-memory)",
                  file=sys.stderr)
            return EXIT_SYSTEM
        MemoryBank(embedding_dim=config.embedding_dim).save(memory_dir)
    bank = MemoryBank.load(memory_dir)
    reasoner = build_reasoner(args.reasoner)
    include_success, include_failure = _partition_gates(args.memory_mode)
    store = TrajectoryStore(args.trajectory_dir) if args.trajectory_dir else None

    spec = spec_for(args.scenario, args.seed)
    env = TabletopEnv(spec, stagnation_window=config.stagnation_window)
    policy = ScriptedPolicy(args.seed)
    state, traj = run_episode(
        env, policy, bank, reasoner, config,
        include_success=include_success, include_failure=include_failure,
        trajectory_store=store,
    )
    if store is not None:
        store.put(traj)

    report = {
        "scenario": args.scenario,
        "scenario_id": spec.scenario_id(),
        "seed": args.seed,
        "memory_mode": args.memory_mode,
        "outcome": state.outcome,
        "turns": state.turn,
        "steps_per_turn": [t.steps for t in traj.turns],
        "chain_per_turn": [
            [[name, theta] for name, theta in t.chain] for t in traj.turns
        ],
    }
    _emit(report, args.out)
    return EXIT_OK if state.outcome == "success" else EXIT_TASK_FAILURE


def cmd_bench_turns(args) -> int:
    config = _load_config(args.config)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MEMORY_MODES:
            print(f"error: unknown memory mode {m!r}", file=sys.stderr)
            return EXIT_USAGE
    if args.episodes < 1:
        print("error: empty suite (episodes must be >= 1)", file=sys.stderr)
        return EXIT_USAGE
    report = bench_turns(modes, args.episodes, args.seed_base,
                         suite=args.suite, config=config)
    _emit(report, args.out)
    for row in report["rows"]:
        print(
            f"{row['mode']:>14}  mean={row['mean_turns']:<8} "
            f"var={row['variance']:<8} success={row['success_rate']}",
            file=sys.stderr,
        )
    if args.plot:
        _write_plot(report, args.plot)
    return EXIT_OK


def _write_plot(report: dict, path: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("warning: matplotlib not installed; skipping plot", file=sys.stderr)
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [row["mode"] for row in report["rows"]]
    ax.boxplot([row["turns"] for row in report["rows"]], tick_labels=labels)
    ax.set_ylabel("turns to success")
    ax.set_title(f"suite={report['suite']} episodes={report['episodes']}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    print(f"plot written to {path}", file=sys.stderr)


def cmd_inspect(args) -> int:
    bank = MemoryBank.load(args.memory)
    counts = {
        "successes": len(bank.success_partition),
        "failures": len(bank.failure_partition),
    }
    sys.stdout.write(canon_line(counts))
    entries = bank.entries()
    if args.partition == "success":
        entries = tuple(e for e in entries if e.success)
    elif args.partition == "failure":
        entries = tuple(e for e in entries if not e.success)
    if args.category:
        entries = tuple(e for e in entries if e.diagnosis.category == args.category)
    for e in entries:
        sys.stdout.write(
            canon_line(
                {
                    "entry_id": e.entry_id,
                    "success": e.success,
                    "category": e.diagnosis.category,
                    "task_text": e.task_text,
                    "created_at": e.created_at,
                }
            )
        )
    return EXIT_OK


def cmd_consolidate(args) -> int:
    config = _load_config(args.config)
    bank = MemoryBank.load(args.memory)
    reasoner = build_reasoner("rules")
    revisions = []
    if args.trajectories:
        store = TrajectoryStore(args.trajectories)
        for traj in store.all():
            _, revs = consolidate_trajectory(bank, traj, reasoner, config)
            revisions.extend(revs)
    elif len(bank):
        newest = max(bank.entries(), key=lambda e: e.created_at)
        revisions.extend(mem_consol(bank, newest, args.top_n, reasoner, config))
    bank.save(args.memory)
    for rev in revisions:
        sys.stdout.write(
            canon_line(
                {"entry_id": rev.entry_id, "field": rev.field,
                 "old": rev.old, "new": rev.new}
            )
        )
    print(f"{len(revisions)} revisions", file=sys.stderr)
    return EXIT_OK


def cmd_serve_tools(args) -> int:
    server = ToolProtocolServer()
    if args.port is not None:
        tcp = server.serve_tcp(args.host, args.port)
        print(f"serving tools on {tcp.server_address[0]}:{tcp.server_address[1]}",
              file=sys.stderr)
        try:
            tcp.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            tcp.server_close()
        return EXIT_OK
    server.serve_stdio()
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "bench-turns": cmd_bench_turns,
    "inspect": cmd_inspect,
    "consolidate": cmd_consolidate,
    "serve-tools": cmd_serve_tools,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SomaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SYSTEM


if __name__ == "__main__":
    raise SystemExit(main())
