"""Built-in scenario suite: the five challenge modes with their seed ranges.

These are the versioned scenario records the acceptance experiments run
against; the CLI resolves `--scenario <mode>` through `spec_for`.
"""

from __future__ import annotations

from .simenv import MODES, ScenarioSpec

SUITE_VERSION = 1

COLDSTART_SEEDS = tuple(range(1, 9))
BENCH_SEEDS = tuple(range(1000, 1050))
MODE_SEEDS = tuple(range(2000, 2040))

SCENARIO_NAMES = (
    "visual_focus",
    "clutter",
    "noisy_prompt",
    "fragility",
    "chaining",
    "none",
)

_NAME_TO_MODE = {
    "visual_focus": "visual_focus",
    "clutter": "clutter_removal",
    "clutter_removal": "clutter_removal",
    "noisy_prompt": "noisy_prompt",
    "fragility": "execution_fragility",
    "execution_fragility": "execution_fragility",
    "chaining": "task_chaining",
    "task_chaining": "task_chaining",
    "none": "none",
}


def spec_for(name: str, seed: int) -> ScenarioSpec:
    mode = _NAME_TO_MODE.get(name)
    if mode is None:
        raise KeyError(name)
    return ScenarioSpec(failure_mode=mode, seed=seed)


def coldstart_specs(seeds=COLDSTART_SEEDS) -> tuple[ScenarioSpec, ...]:
    """Perturbation-free scenarios used to populate memory before evaluation."""
    return tuple(ScenarioSpec(failure_mode="none", seed=s) for s in seeds)


def suite_record() -> dict:
    """The whole suite as one versioned record (modes x seed ranges)."""
    return {
        "version": SUITE_VERSION,
        "coldstart": {"mode": "none", "seeds": list(COLDSTART_SEEDS)},
        "bench": {"mode": "clutter_removal", "seeds": list(BENCH_SEEDS)},
        "modes": {mode: {"seeds": list(MODE_SEEDS)} for mode in MODES if mode != "none"},
    }
