"""Benchmark harnesses: cold start, turns-to-success ablation, per-mode lift.

Episodes within a mode run sequentially in seed order with consolidation
after each one, so the bank evolves exactly the way the online system would
evolve it; the memory mode only gates which partitions retrieval may read.
Every harness is a pure function of (suite, seeds, config), so repeated runs
produce identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import LoopConfig
from .consolidation import TrajectoryStore, consolidate_trajectory
from .memory import MemoryBank
from .orchestrator import run_episode
from .reasoner import NullReasoner, RuleReasoner
from .simenv import ScriptedPolicy, TabletopEnv
from .suites import coldstart_specs, spec_for

MEMORY_MODES = ("none", "failure_only", "success_only", "dual")


@dataclass(frozen=True)
class BenchConfig:
    memory_mode: str = "dual"
    episodes: int = 50
    seed_base: int = 1000
    suite: str = "clutter"

    def __post_init__(self):
        if self.memory_mode not in MEMORY_MODES:
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


def _partition_gates(memory_mode: str) -> tuple[bool, bool]:
    return {
        "none": (False, False),
        "failure_only": (False, True),
        "success_only": (True, False),
        "dual": (True, True),
    }[memory_mode]


def cold_start(config: LoopConfig | None = None, seeds=None,
               store: TrajectoryStore | None = None) -> tuple[MemoryBank, TrajectoryStore]:
    """Bare-policy pass over perturbation-free scenarios; populates generic
    success traces without any exposure to evaluation-time perturbations."""
    config = config or LoopConfig()
    bank = MemoryBank(embedding_dim=config.embedding_dim)
    store = store or TrajectoryStore()
    rule = RuleReasoner()
    null = NullReasoner()
    specs = coldstart_specs(seeds) if seeds is not None else coldstart_specs()
    for spec in specs:
        env = TabletopEnv(spec, stagnation_window=config.stagnation_window)
        policy = ScriptedPolicy(spec.seed)
        _, traj = run_episode(env, policy, bank, null, config)
        store.put(traj)
        consolidate_trajectory(bank, traj, rule, config)
    return bank, store


def run_mode(cfg: BenchConfig, cold_bank: MemoryBank, store: TrajectoryStore,
             config: LoopConfig | None = None) -> dict:
    """One memory-mode row of the turns-to-success ablation."""
    config = config or LoopConfig()
    include_success, include_failure = _partition_gates(cfg.memory_mode)
    bank = cold_bank.clone()
    reasoner = NullReasoner() if cfg.memory_mode == "none" else RuleReasoner()
    rule = RuleReasoner()
    mode_store = TrajectoryStore()
    for traj in store.all():
        mode_store.put(traj)

    turns = []
    successes = 0
    for i in range(cfg.episodes):
        seed = cfg.seed_base + i
        spec = spec_for(cfg.suite, seed)
        env = TabletopEnv(spec, stagnation_window=config.stagnation_window)
        policy = ScriptedPolicy(seed)
        state, traj = run_episode(
            env, policy, bank, reasoner, config,
            include_success=include_success, include_failure=include_failure,
            trajectory_store=mode_store,
        )
        turns.append(state.turn)
        successes += state.outcome == "success"
        mode_store.put(traj)
        if cfg.memory_mode != "none":
            consolidate_trajectory(bank, traj, rule, config)
    mean = sum(turns) / len(turns)
    variance = sum((t - mean) ** 2 for t in turns) / len(turns)
    return {
        "mode": cfg.memory_mode,
        "episodes": cfg.episodes,
        "mean_turns": round(mean, 6),
        "variance": round(variance, 6),
        "success_rate": round(successes / cfg.episodes, 6),
        "turns": turns,
    }


def bench_turns(modes, episodes: int, seed_base: int, suite: str = "clutter",
                config: LoopConfig | None = None) -> dict:
    config = config or LoopConfig()
    cold_bank, store = cold_start(config)
    rows = [
        run_mode(BenchConfig(memory_mode=m, episodes=episodes,
                             seed_base=seed_base, suite=suite),
                 cold_bank, store, config)
        for m in modes
    ]
    return {"suite": suite, "episodes": episodes, "seed_base": seed_base, "rows": rows}


def run_bare(spec, config: LoopConfig | None = None) -> bool:
    """Single unassisted attempt: the frozen policy with no loop around it."""
    config = config or LoopConfig()
    bank = MemoryBank(embedding_dim=config.embedding_dim)
    env = TabletopEnv(spec, stagnation_window=config.stagnation_window)
    policy = ScriptedPolicy(spec.seed)
    state, _ = run_episode(
        env, policy, bank, NullReasoner(),
        LoopConfig(**{**config.to_dict(), "turn_cap": 1}),
    )
    return state.outcome == "success"


def mode_lift(mode: str, seeds, config: LoopConfig | None = None,
              cold: tuple[MemoryBank, TrajectoryStore] | None = None) -> dict:
    """Baseline vs full-loop success rates for one failure mode."""
    config = config or LoopConfig()
    cold_bank, store = cold if cold is not None else cold_start(config)

    baseline = sum(run_bare(spec_for(mode, s), config) for s in seeds)

    bank = cold_bank.clone()
    mode_store = TrajectoryStore()
    for traj in store.all():
        mode_store.put(traj)
    rule = RuleReasoner()
    loop = 0
    for s in seeds:
        spec = spec_for(mode, s)
        env = TabletopEnv(spec, stagnation_window=config.stagnation_window)
        policy = ScriptedPolicy(s)
        state, traj = run_episode(env, policy, bank, rule, config,
                                  trajectory_store=mode_store)
        loop += state.outcome == "success"
        mode_store.put(traj)
        consolidate_trajectory(bank, traj, rule, config)
    n = len(list(seeds))
    return {
        "mode": mode,
        "episodes": n,
        "baseline_rate": round(baseline / n, 6),
        "loop_rate": round(loop / n, 6),
    }
