from __future__ import annotations

from hashlib import blake2b

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soma.errors import UnsatisfiableSpecError
from soma.memory import scene_to_record
from soma.serde import canon_dumps
from soma.simenv import (
    Action,
    ScenarioSpec,
    ScriptedPolicy,
    TabletopEnv,
    evaluate_goal,
    generate,
    slip_roll,
)
from soma.suites import spec_for


def rollout(env, policy, max_steps=250, instruction=None):
    instruction = instruction or env.instruction
    events = []
    for step in range(max_steps):
        obs = env.observe()
        events.extend(env.step(policy(obs, instruction)))
        if evaluate_goal(env.scene):
            return True, step + 1, events
    return False, max_steps, events


def test_visual_focus_scene_has_five_identical_candidates():
    scene, _ = generate(spec_for("visual_focus", 3))
    groups = {}
    for o in scene.objects:
        groups.setdefault((o.shape, o.color, o.texture), []).append(o)
    lookalikes = max(groups.values(), key=len)
    assert len(lookalikes) == 5
    assert sum(1 for o in lookalikes if o.object_id == scene.target_id) == 1


def test_none_mode_is_clean_and_canonical():
    from soma.language import is_canonical

    scene, instruction = generate(spec_for("none", 12))
    assert is_canonical(instruction)
    distractors = [o for o in scene.objects
                   if o.object_id != scene.target_id and o.shape != "basket"]
    assert len(distractors) <= 2


def test_generation_is_deterministic_byte_for_byte():
    def snapshot(seed):
        env = TabletopEnv(spec_for("clutter", seed))
        obs = env.observe()
        return canon_dumps(
            {
                "scene": scene_to_record(obs.scene),
                "raster": list(obs.raster.cells),
                "instruction": env.instruction,
                "effector": list(obs.effector),
            }
        )

    assert snapshot(31) == snapshot(31)
    assert snapshot(31) != snapshot(32)


def test_invalid_intensity_rejected():
    with pytest.raises(UnsatisfiableSpecError):
        generate(ScenarioSpec(failure_mode="clutter_removal", distractor_count=2, seed=1))
    with pytest.raises(UnsatisfiableSpecError):
        generate(ScenarioSpec(failure_mode="bogus", seed=1))


def test_place_at_goal_satisfies_predicate():
    env = TabletopEnv(spec_for("none", 5))
    target = env.scene.get(env.scene.target_id)
    basket = next(o for o in env.scene.objects if o.shape == "basket")
    target.position = basket.footprint[0]
    assert evaluate_goal(env.scene)


def test_seeded_slip_matches_independent_hash_rule():
    spec = spec_for("fragility", 2000)
    env = TabletopEnv(spec)
    policy = ScriptedPolicy(spec.seed)
    _, _, events = rollout(env, policy, max_steps=120)
    slips = [e.step for e in events if e.kind == "slip"]
    assert slips, "fragility seed 2000 should slip at least once"

    # independent oracle: recompute the hash rule from scratch
    def oracle(step):
        digest = blake2b(f"slip:{spec.seed}:{step}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big") % 1000 < spec.slip_rate_permille

    for step in slips:
        assert oracle(step)
    assert all(slip_roll(spec.seed, s, spec.slip_rate_permille) for s in slips)


def test_twenty_noops_emit_stagnation_event():
    env = TabletopEnv(spec_for("none", 4))
    events = []
    for _ in range(25):
        events.extend(env.step(Action("noop")))
    assert any(e.kind == "stagnation" for e in events)


def test_clean_scene_completes_within_200_steps():
    for seed in (1, 2, 3):
        env = TabletopEnv(spec_for("none", seed))
        ok, steps, _ = rollout(env, ScriptedPolicy(seed))
        assert ok and steps <= 200


def test_clutter_without_intervention_never_succeeds():
    env = TabletopEnv(spec_for("clutter", 2001))
    ok, _, events = rollout(env, ScriptedPolicy(2001), max_steps=200)
    assert not ok
    assert any(e.kind == "stagnation" for e in events)


def test_clutter_with_four_distractors_erased_succeeds():
    from dataclasses import replace

    from soma.memory import SceneSummary

    spec = spec_for("clutter", 2003)
    env = TabletopEnv(spec)
    obs = env.observe()
    bowls = sorted(
        (o for o in obs.scene.objects if not o.is_target and o.shape == "bowl"),
        key=lambda o: o.object_id,
    )
    erased = {o.object_id for o in bowls[:4]}  # includes both lookalikes

    policy = ScriptedPolicy(spec.seed)

    def filtered_policy(o, instruction):
        filtered = replace(
            o,
            scene=SceneSummary(
                objects=tuple(x for x in o.scene.objects if x.object_id not in erased)
            ),
        )
        return policy(filtered, instruction)

    ok, _, _ = rollout(env, filtered_policy)
    assert ok


def test_lookalike_trap_defeated_by_overlay_marker():
    from dataclasses import replace

    from soma.memory import SceneSummary

    spec = spec_for("visual_focus", 2005)
    env = TabletopEnv(spec)
    ok, _, _ = rollout(env, ScriptedPolicy(spec.seed))
    assert not ok  # seeded wrong pick looks done but the true goal is unmet

    env.reset()
    policy = ScriptedPolicy(spec.seed)

    def marked_policy(o, instruction):
        marked = replace(
            o,
            scene=SceneSummary(
                objects=tuple(replace(x, overlay=True) if x.is_target else x
                              for x in o.scene.objects)
            ),
        )
        return policy(marked, instruction)

    ok, _, _ = rollout(env, marked_policy)
    assert ok


def test_noisy_prompt_noops_until_refined():
    spec = spec_for("noisy_prompt", 2002)
    env = TabletopEnv(spec)
    ok, _, _ = rollout(env, ScriptedPolicy(spec.seed), max_steps=60)
    assert not ok

    env.reset()
    target = env.scene.get(env.scene.target_id)
    refined = f"pick up the {target.color} {target.shape} and place it in the basket"
    ok, _, _ = rollout(env, ScriptedPolicy(spec.seed), instruction=refined)
    assert ok


def test_chaining_fatigue_fails_without_buffers():
    spec = spec_for("chaining", 2004)
    env = TabletopEnv(spec)
    ok, _, _ = rollout(env, ScriptedPolicy(spec.seed), max_steps=400)
    assert not ok
    assert env.steps_since_buffer > 120


def test_buffer_steps_reset_the_fatigue_clock():
    env = TabletopEnv(spec_for("none", 6))
    for _ in range(7):
        env.step(Action("noop"))
    assert env.steps_since_buffer == 7
    env.step(Action("buffer"))
    assert env.steps_since_buffer == 0


def test_object_count_is_conserved_by_the_environment():
    spec = spec_for("fragility", 2006)
    env = TabletopEnv(spec)
    before = len(env.scene.objects)
    rollout(env, ScriptedPolicy(spec.seed), max_steps=150)
    assert len(env.scene.objects) == before


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(["none", "visual_focus", "clutter_removal",
                     "noisy_prompt", "execution_fragility", "task_chaining"]),
    st.integers(0, 10_000),
    st.lists(st.integers(0, 32 * 32 - 1), min_size=1, max_size=40),
)
def test_identical_inputs_replay_identical_event_streams(mode, seed, cells):
    spec = ScenarioSpec(failure_mode=mode, seed=seed)

    def run():
        env = TabletopEnv(spec)
        policy = ScriptedPolicy(seed)
        stream = []
        for i, cell in enumerate(cells):
            # interleave scripted actions with policy actions
            if i % 3 == 2:
                action = policy(env.observe(), env.instruction)
            elif i % 3 == 1:
                action = Action("move", cell=cell)
            else:
                action = Action("noop")
            stream.extend(env.step(action))
        obs = env.observe()
        return stream, canon_dumps(scene_to_record(obs.scene)), obs.effector

    assert run() == run()


def test_snapshot_restore_rewinds_world_but_not_time():
    env = TabletopEnv(spec_for("none", 8))
    snap = env.snapshot()
    policy = ScriptedPolicy(8)
    for _ in range(30):
        env.step(policy(env.observe(), env.instruction))
    t = env.step_index
    env.restore(snap)
    assert env.step_index == t
    assert env.observe().effector == snap["effector"]
