"""Online episode loop: gap analysis, tool matching, parameterization, chain
synthesis, and chunked execution with reactive stagnation recovery.

A turn is one plan-execute-feedback loop. The plan is rebuilt each turn from
fresh retrieval plus the sparse feedback of earlier failed turns (outcome,
scene delta, observed stagnation, applied tools); the environment is reset
between turns so a turn always re-attempts the task from the start. Episodes
end on success or when the turn cap runs out.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, replace

from . import language
from .config import LoopConfig
from .consolidation import TrajectoryRecord, TurnRecord
from .errors import SchemaViolationError, SomaError, UnparameterizableError
from .memory import MemoryBank, SceneSummary, scene_to_record
from .reasoner import ReasonerRequest, validate_response
from .retrieval import RetrievalSet, TaskContext, retrieve_top_k
from .serde import validate_value
from .simenv import (
    BUFFER,
    CLUTTER_LIMIT,
    FATIGUE_LIMIT,
    LOOKALIKE_MIN,
    Action,
    Observation,
    evaluate_goal,
    footprint_for,
)
from .tools import (
    ENCORE,
    ERASER,
    PAINT,
    TOOL_PRIORITY,
    Segment,
    ToolDescriptor,
    ToolRegistry,
    default_registry,
    encore as encore_transform,
    eraser as eraser_transform,
    params_from_theta,
)

log = logging.getLogger(__name__)

NOVEL_OBJECT = "novel_object"
MISSING_OBJECT = "missing_object"
ATTRIBUTE_SHIFT = "attribute_shift"
DUPLICATE_LOOKALIKE = "duplicate_lookalike"

_ENCORE_CAP_PER_TURN = 25


@dataclass(frozen=True)
class VisualDiff:
    kind: str
    object_id: str
    feature_distance: float


@dataclass(frozen=True)
class SemanticDiff:
    token: str
    kind: str


@dataclass(frozen=True)
class TemporalGap:
    current_step: int
    reference_max_step: int | None
    stagnation_window: int
    projected_steps: int


@dataclass(frozen=True)
class DiscrepancyReport:
    """Visual, semantic, and temporal gaps between the current context and
    retrieved priors; active lists the derived failure categories, each
    flagged corroborated when backed by observed execution rather than scene
    analysis alone."""

    visual: tuple[VisualDiff, ...]
    semantic: tuple[SemanticDiff, ...]
    temporal: TemporalGap
    overall_gap: float
    active: tuple[tuple[str, bool], ...] = ()
    low_confidence: bool = False

    def active_categories(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.active)

    def to_payload(self) -> dict:
        return {
            "visual": [
                {"kind": v.kind, "object_id": v.object_id,
                 "feature_distance": v.feature_distance}
                for v in self.visual
            ],
            "semantic": [{"token": s.token, "kind": s.kind} for s in self.semantic],
            "temporal": {
                "current_step": self.temporal.current_step,
                "reference_max_step": self.temporal.reference_max_step,
                "stagnation_window": self.temporal.stagnation_window,
                "projected_steps": self.temporal.projected_steps,
            },
            "active": [{"category": c, "corroborated": f} for c, f in self.active],
            "low_confidence": self.low_confidence,
        }


@dataclass(frozen=True)
class ParameterizedIntervention:
    tool: str
    theta: dict


@dataclass(frozen=True)
class InterventionChain:
    steps: tuple[ParameterizedIntervention, ...] = ()

    def get(self, tool: str) -> ParameterizedIntervention | None:
        for step in self.steps:
            if step.tool == tool:
                return step
        return None

    def tool_names(self) -> tuple[str, ...]:
        return tuple(step.tool for step in self.steps)


@dataclass(frozen=True)
class TurnFeedback:
    """Sparse environmental feedback appended to the reasoning context."""

    turn: int
    outcome: str
    stagnation_window: int
    scene_delta: int
    applied_tools: tuple[str, ...]


@dataclass(frozen=True)
class EpisodeState:
    ctx: TaskContext
    retrieval: RetrievalSet
    chain: InterventionChain
    turn: int
    outcome: str
    trajectory: TrajectoryRecord


def _resolve_hits(hits: RetrievalSet, bank: MemoryBank):
    resolved = []
    for entry_id, score in hits.hits:
        resolved.append((bank.get(entry_id), score))
    return resolved


def compute_gap(
    ctx: TaskContext,
    hits: RetrievalSet,
    bank: MemoryBank,
    config: LoopConfig | None = None,
    feedback: tuple[TurnFeedback, ...] = (),
) -> DiscrepancyReport:
    """Multi-dimensional discrepancy between the context and retrieved priors.

    Visual diffs compare the scene against the best success exemplar (or fall
    back to scene-only heuristics, flagged low confidence); semantic diffs
    classify off-grammar instruction tokens; the temporal gap projects the
    horizon from clause count and the exemplar's step budget, and carries any
    stagnation observed in earlier turns of this episode.
    """
    config = config or LoopConfig()
    resolved = _resolve_hits(hits, bank)
    best_success = next((e for e, _ in resolved if e.success), None)

    visual: list[VisualDiff] = []
    objs = ctx.scene.objects
    target = ctx.scene.target()

    # lookalike duplicates touching the target need no reference scene
    if target is not None:
        group = [
            o for o in objs
            if (o.shape, o.color, o.texture) == (target.shape, target.color, target.texture)
        ]
        if len(group) >= LOOKALIKE_MIN:
            visual.extend(
                VisualDiff(DUPLICATE_LOOKALIKE, o.object_id, 0.0)
                for o in group
                if not o.is_target
            )

    # instruction-grounded appearance drift on the target itself
    clauses = language.parse_instruction(ctx.instruction)
    if clauses and target is not None:
        want = clauses[0]
        dist = 0.5 * (want.color != target.color) + 0.5 * (want.shape != target.shape)
        if dist > 0:
            visual.append(VisualDiff(ATTRIBUTE_SHIFT, target.object_id, dist))

    def pool(scene: SceneSummary):
        return [
            o for o in scene.objects
            if not o.is_target and o.shape not in language.CONTAINER_SHAPES
        ]

    if best_success is not None:
        ref_counts = Counter((o.shape, o.color, o.texture) for o in pool(best_success.scene))
        novel: list = []
        for o in sorted(pool(ctx.scene), key=lambda o: o.object_id):
            key = (o.shape, o.color, o.texture)
            if ref_counts[key] > 0:
                ref_counts[key] -= 1
            else:
                novel.append(o)
        missing = [key for key, n in ref_counts.items() for _ in range(n)]
        # pair same-shape leftovers as attribute drift instead of add/remove
        for key in list(missing):
            shape, color, texture = key
            match = next((o for o in novel if o.shape == shape), None)
            if match is not None:
                novel.remove(match)
                missing.remove(key)
                dist = 0.5 * (color != match.color) + 0.5 * (texture != match.texture)
                visual.append(VisualDiff(ATTRIBUTE_SHIFT, match.object_id, dist))
        visual.extend(VisualDiff(NOVEL_OBJECT, o.object_id, 1.0) for o in novel)
        visual.extend(
            VisualDiff(MISSING_OBJECT, f"{shape}:{color}", 1.0)
            for shape, color, _ in missing
        )
        low_confidence = False
    else:
        # no success exemplar: flag the whole distractor field only when it
        # exceeds what a policy tolerates
        distractors = pool(ctx.scene)
        if len(distractors) > CLUTTER_LIMIT:
            visual.extend(
                VisualDiff(NOVEL_OBJECT, o.object_id, 1.0)
                for o in sorted(distractors, key=lambda o: o.object_id)
            )
        low_confidence = True

    semantic = tuple(
        SemanticDiff(token, kind)
        for token, kind in language.classify_deviations(ctx.instruction)
    )

    reference_max = best_success.metadata.success_max_step if best_success else None
    projected = _projected_steps(ctx.scene, clauses, config)
    stagnation = max((f.stagnation_window for f in feedback), default=0)
    temporal = TemporalGap(
        current_step=ctx.step_count,
        reference_max_step=reference_max,
        stagnation_window=stagnation,
        projected_steps=projected,
    )

    active: list[tuple[str, bool]] = []
    if any(v.kind in (DUPLICATE_LOOKALIKE, ATTRIBUTE_SHIFT) for v in visual):
        active.append(("visual_shift", False))
    novel_count = sum(1 for v in visual if v.kind == NOVEL_OBJECT)
    if novel_count > CLUTTER_LIMIT:
        active.append(("causal_confusion", False))
    if semantic:
        active.append(("linguistic_ambiguity", False))
    horizon_risk = projected > FATIGUE_LIMIT or (
        reference_max is not None and ctx.step_count > reference_max
    )
    if horizon_risk:
        active.append(("temporal_compounding", False))
    stagnant = stagnation >= config.stagnation_window
    if stagnant:
        # stagnation is only ever known from observed execution
        active.append(("execution_stagnation", True))

    temporal_score = float(stagnant) + float(projected > FATIGUE_LIMIT) + float(
        reference_max is not None and ctx.step_count > reference_max
    )
    overall = (
        config.gap_weight_visual * len(visual)
        + config.gap_weight_semantic * len(semantic)
        + config.gap_weight_temporal * temporal_score
    )
    return DiscrepancyReport(
        visual=tuple(visual),
        semantic=semantic,
        temporal=temporal,
        overall_gap=overall,
        active=tuple(active),
        low_confidence=low_confidence,
    )


def _projected_steps(scene: SceneSummary, clauses, config: LoopConfig) -> int:
    """Scene-grounded horizon estimate: twice the grid distance between each
    clause object and its container covers approach plus carry. Falls back to
    a nominal per-clause budget when the instruction or scene cannot be
    resolved."""
    from .simenv import GRID_SIZE

    if not clauses:
        return config.nominal_steps_per_clause
    total = 0
    for clause in clauses:
        containers = [
            o for o in scene.objects if o.shape == clause.location_shape
            and o.shape in language.CONTAINER_SHAPES
        ]
        matches = [
            o for o in scene.objects
            if o.shape == clause.shape and o.color == clause.color
        ]
        if not containers or not matches:
            total += config.nominal_steps_per_clause
            continue
        obj = next((o for o in matches if o.is_target), matches[0])
        dest = min(containers, key=lambda o: o.object_id)
        ox, oy = obj.position % GRID_SIZE, obj.position // GRID_SIZE
        dx, dy = dest.position % GRID_SIZE, dest.position // GRID_SIZE
        total += 2 * (abs(ox - dx) + abs(oy - dy))
    return total


def match_tools(
    report: DiscrepancyReport,
    registry: ToolRegistry,
    reasoner,
    hits: RetrievalSet | None = None,
    bank: MemoryBank | None = None,
    feedback: tuple[TurnFeedback, ...] = (),
    adopt_threshold: float = 0.3,
) -> list[ToolDescriptor]:
    """Zero-shot selection of tools whose capabilities cover the active
    discrepancy categories, delegated to the reasoner. Failure precedents
    among the hits contribute their recorded plans as selection evidence."""
    precedent_plans = []
    if hits is not None and bank is not None:
        for entry, score in _resolve_hits(hits, bank):
            if entry.success or score < adopt_threshold:
                continue
            tools_in_plan = [name for name, _ in entry.diagnosis.intervention_plan]
            if tools_in_plan:
                precedent_plans.append(
                    {
                        "category": entry.diagnosis.category,
                        "tools": tools_in_plan,
                        "similarity": float(score),
                    }
                )
    req = ReasonerRequest(
        kind="match",
        payload={
            "active": [{"category": c, "corroborated": f} for c, f in report.active],
            "registry": [
                {"name": d.name, "capability_tags": list(d.capability_tags)}
                for d in registry.descriptors()
            ],
            "precedent_plans": precedent_plans,
            "feedback_turns": len(feedback),
        },
    )
    resp = reasoner.reason(req)
    validate_response(resp, "match")
    out = []
    for name in resp.payload["tools"]:
        try:
            out.append(registry.get(name))
        except SomaError:
            log.warning("reasoner selected unknown tool %r; skipped", name)
    return out


def parameterize(
    tool: ToolDescriptor,
    report: DiscrepancyReport,
    hits: RetrievalSet,
    bank: MemoryBank,
    reasoner,
    ctx: TaskContext | None = None,
    config: LoopConfig | None = None,
    instruction: str | None = None,
) -> ParameterizedIntervention:
    """Derive theta for one selected tool from the report, the scene, and
    failure-precedent metadata. Raises UnparameterizableError when no valid
    parameters exist, so the caller can drop the tool with a logged cause."""
    config = config or LoopConfig()
    precedent = None
    for entry, _ in _resolve_hits(hits, bank):
        if not entry.success:
            precedent = {
                "key_frame_range": list(entry.metadata.key_frame_range),
                "success_max_step": entry.metadata.success_max_step,
            }
            break
    req = ReasonerRequest(
        kind="parameterize",
        payload={
            "tool": tool.name,
            "report": report.to_payload(),
            "scene": scene_to_record(ctx.scene) if ctx is not None else {"objects": []},
            "instruction": instruction if instruction is not None else (
                ctx.instruction if ctx is not None else ""
            ),
            "precedent": precedent,
            "defaults": {
                "exec_steps": config.segment_exec_steps,
                "buffer_steps": config.segment_buffer_steps,
                "wait_steps": config.encore_wait,
                "horizon": config.max_steps_per_turn,
                "overlay_color": "magenta",
                "overlay_material": "marker",
            },
        },
    )
    resp = reasoner.reason(req)
    validate_response(resp, "parameterize")
    theta = resp.payload["theta"]
    if theta is None:
        raise UnparameterizableError(
            f"{tool.name}: {resp.payload.get('reason', 'no parameters')}"
        )
    schema = tool.parameter_schema.get("properties", {}).get("params")
    if schema is not None:
        validate_value(schema, theta, "theta")
    return ParameterizedIntervention(tool=tool.name, theta=theta)


def orchestrate(selected) -> InterventionChain:
    """Synthesize the ordered intervention chain: fixed priority classes,
    stable within a class, each tool at most once."""
    names = [pi.tool for pi in selected]
    dup = [n for n, c in Counter(names).items() if c > 1]
    if dup:
        raise SchemaViolationError("selected", f"tool appears more than once: {dup}")
    ordered = sorted(selected, key=lambda pi: TOOL_PRIORITY.get(pi.tool, len(TOOL_PRIORITY)))
    return InterventionChain(steps=tuple(ordered))


# episode execution

def _clauses_satisfied(scene: SceneSummary, text: str) -> bool:
    clauses = language.parse_instruction(text)
    if not clauses:
        return False
    containers = [o for o in scene.objects if o.shape in language.CONTAINER_SHAPES]
    for clause in clauses:
        dests = [c for c in containers if c.shape == clause.location_shape]
        if not dests:
            return False
        dest = min(dests, key=lambda o: o.object_id)
        dest_cells = set(footprint_for(dest.shape, dest.position))
        if not any(
            o.position in dest_cells
            and o.shape == clause.shape
            and o.color == clause.color
            for o in scene.objects
        ):
            return False
    return True


def _scene_delta(before: SceneSummary, after: SceneSummary) -> int:
    pos_before = {o.object_id: o.position for o in before.objects}
    pos_after = {o.object_id: o.position for o in after.objects}
    moved = sum(
        1 for oid, p in pos_after.items() if pos_before.get(oid) != p
    )
    gone = sum(1 for oid in pos_before if oid not in pos_after)
    return moved + gone


@dataclass
class _TurnOutcome:
    success: bool = False
    steps: int = 0
    stagnation_seen: bool = False
    encore_fired: bool = False
    keyframes: list = None
    pose_log: tuple = ()
    final_scene: SceneSummary = None
    instruction_final: str = ""
    error: str = ""


def _execute_turn(env, policy, chain: InterventionChain, config: LoopConfig,
                  registry: ToolRegistry, reference_logs) -> _TurnOutcome:
    from .memory import record_to_scene
    from .tools import raster_to_record, record_to_raster

    out = _TurnOutcome(keyframes=[])
    instruction = env.instruction
    segments = [Segment(instruction, config.max_steps_per_turn, 0)]
    obs_steps: list[ParameterizedIntervention] = []
    encore_pi = None

    obs0 = env.observe()
    for pi in chain.steps:
        descriptor = registry.get(pi.tool)
        applies = getattr(descriptor, "applies_to", "observation")
        if applies == "instruction":
            result = registry.invoke(pi.tool, {"instruction": instruction, "params": pi.theta})
            instruction = result["text"]
            segments = [Segment(instruction, config.max_steps_per_turn, 0)]
        elif applies == "plan":
            result = registry.invoke(
                pi.tool,
                {"plan": instruction, "params": pi.theta, "horizon": config.max_steps_per_turn},
            )
            segments = [
                Segment(s["text"], s["exec_steps"], s["buffer_steps"])
                for s in result["segments"]
            ]
        elif applies == "state":
            encore_pi = pi
        else:
            # validate once through the protocol path; the per-step loop then
            # re-applies the scene-side effect of the idempotent transform
            registry.invoke(
                pi.tool,
                {
                    "observation": {
                        "scene": scene_to_record(obs0.scene),
                        "raster": raster_to_record(obs0.raster),
                    },
                    "params": pi.theta,
                },
            )
            obs_steps.append(pi)
    out.instruction_final = instruction

    erased_ids: set[str] = set()
    overlay_cells: set[int] = set()
    wire_steps: list[ParameterizedIntervention] = []
    for pi in obs_steps:
        if pi.tool == ERASER:
            params = params_from_theta(ERASER, pi.theta)
            scene2, _ = eraser_transform(obs0.scene, obs0.raster, params)
            kept = {o.object_id for o in scene2.objects}
            erased_ids.update(o.object_id for o in obs0.scene.objects if o.object_id not in kept)
        elif pi.tool == PAINT:
            overlay_cells.update(params_from_theta(PAINT, pi.theta).A_mask)
        else:
            wire_steps.append(pi)

    def transform(obs: Observation) -> Observation:
        scene = obs.scene
        if erased_ids or overlay_cells:
            scene = SceneSummary(
                objects=tuple(
                    (replace(o, overlay=True) if o.position in overlay_cells else o)
                    for o in scene.objects
                    if o.object_id not in erased_ids
                )
            )
        raster = obs.raster
        for pi in wire_steps:
            result = registry.invoke(
                pi.tool,
                {
                    "observation": {
                        "scene": scene_to_record(scene),
                        "raster": raster_to_record(raster),
                    },
                    "params": pi.theta,
                },
            )
            scene = record_to_scene(result["observation"]["scene"])
            raster = record_to_raster(result["observation"]["raster"])
        return replace(obs, scene=scene, raster=raster)

    snapshots = {env.step_index: env.snapshot()}
    encore_uses = 0
    failed = False

    def charge(action: Action) -> None:
        env.step(action)
        out.steps += 1

    for seg in segments:
        if out.success or failed:
            break
        seg_used = 0
        while seg_used < seg.exec_steps and out.steps < config.max_steps_per_turn:
            chunk = min(
                config.chunk_steps,
                seg.exec_steps - seg_used,
                config.max_steps_per_turn - out.steps,
            )
            events = []
            for _ in range(chunk):
                obs = transform(env.observe())
                action = policy(obs, seg.text)
                events.extend(env.step(action))
                out.steps += 1
                seg_used += 1
                if out.steps % config.keyframe_stride == 0:
                    snapshots[env.step_index] = env.snapshot()
                    out.keyframes.append((env.step_index, transform(env.observe()).scene))
            if evaluate_goal(env.scene):
                out.success = True
                break
            if _clauses_satisfied(transform(env.observe()).scene, seg.text):
                break  # segment done; buffer then move on
            if any(e.kind == "stagnation" for e in events):
                out.stagnation_seen = True
                if encore_pi is not None and encore_uses < _ENCORE_CAP_PER_TURN:
                    encore_uses += 1
                    out.encore_fired = True
                    _apply_encore(env, encore_pi, config, reference_logs, snapshots, charge)
                else:
                    failed = True
                    break
        if out.success or failed:
            break
        for _ in range(seg.buffer_steps):
            if out.steps >= config.max_steps_per_turn:
                break
            charge(BUFFER)

    if not out.success and evaluate_goal(env.scene):
        out.success = True
    out.final_scene = transform(env.observe()).scene
    out.pose_log = tuple(env.pose_history)
    out.keyframes = out.keyframes[-config.keyframe_cap:]
    return out


def _apply_encore(env, encore_pi, config, reference_logs, snapshots, charge) -> None:
    from dataclasses import replace as _replace

    params = params_from_theta(ENCORE, encore_pi.theta)
    state = env.execution_state(config.encore_window)
    # precedent retry bounds may lie outside this episode's timeline; clamp
    # them to the live state instead of failing the turn
    s_s = min(params.s_s, state.step_index)
    params = _replace(params, s_s=s_s, s_e=max(params.s_e, s_s))
    recovered = encore_transform(state, params, reference_logs, window=config.encore_window)
    if recovered.reset_to_step is not None:
        eligible = [s for s in snapshots if s <= recovered.reset_to_step]
        anchor = max(eligible) if eligible else min(snapshots)
        env.restore(snapshots[anchor])
    else:
        env.teleport(recovered.pose)
        for _ in range(len(recovered.rollback_deltas)):
            charge(Action("recover"))
    for _ in range(recovered.wait_steps):
        charge(Action("wait"))


def run_episode(
    env,
    policy,
    bank: MemoryBank,
    reasoner,
    config: LoopConfig | None = None,
    registry: ToolRegistry | None = None,
    include_success: bool = True,
    include_failure: bool = True,
    embedder=None,
    trajectory_store=None,
) -> tuple[EpisodeState, TrajectoryRecord]:
    """Drive one episode to success or the turn cap; returns the final state
    and the raw trajectory for offline consolidation."""
    config = config or LoopConfig()
    registry = registry or default_registry()
    if embedder is None:
        from .retrieval import build_embedder

        embedder = build_embedder(config.embedder, bank.embedding_dim)

    feedback: list[TurnFeedback] = []
    turns: list[TurnRecord] = []
    outcome = "timeout"
    ctx = None
    hits = RetrievalSet()
    chain = InterventionChain()
    turn = 0

    for turn in range(1, config.turn_cap + 1):
        if turn > 1:
            env.reset()
        obs0 = env.observe()
        ctx = TaskContext(
            scene=obs0.scene, instruction=env.instruction,
            step_count=0, raster=obs0.raster,
        )
        hits = retrieve_top_k(
            bank, ctx, config.k, embedder=embedder,
            include_success=include_success, include_failure=include_failure,
        )
        report = compute_gap(ctx, hits, bank, config=config, feedback=tuple(feedback))
        matched = match_tools(
            report, registry, reasoner, hits=hits, bank=bank,
            feedback=tuple(feedback), adopt_threshold=config.adopt_threshold,
        )
        selected = []
        for descriptor in matched:
            try:
                selected.append(
                    parameterize(descriptor, report, hits, bank, reasoner,
                                 ctx=ctx, config=config)
                )
            except UnparameterizableError as exc:
                log.info("dropped tool: %s", exc)
        chain = orchestrate(selected)

        reference_logs = _reference_logs(hits, bank, trajectory_store)
        error = ""
        try:
            result = _execute_turn(env, policy, chain, config, registry, reference_logs)
        except SomaError as exc:
            result = _TurnOutcome(keyframes=[], final_scene=obs0.scene,
                                  instruction_final=env.instruction)
            result.error = str(exc)
            error = str(exc)

        turns.append(
            TurnRecord(
                turn=turn,
                instruction_raw=env.instruction,
                instruction_final=result.instruction_final,
                scene_start=obs0.scene,
                final_scene=result.final_scene or obs0.scene,
                active_categories=report.active_categories(),
                chain=tuple((pi.tool, pi.theta) for pi in chain.steps),
                outcome="success" if result.success else "failure",
                steps=result.steps,
                stagnation_seen=result.stagnation_seen,
                scene_delta=_scene_delta(obs0.scene, result.final_scene or obs0.scene),
                encore_fired=result.encore_fired,
                keyframes=tuple(result.keyframes or ()),
                pose_log=result.pose_log,
                error=result.error,
            )
        )
        if result.success:
            outcome = "success"
            break
        if error:
            outcome = "failure"
            break
        feedback.append(
            TurnFeedback(
                turn=turn,
                outcome="failure",
                stagnation_window=config.stagnation_window if result.stagnation_seen else 0,
                scene_delta=turns[-1].scene_delta,
                applied_tools=chain.tool_names(),
            )
        )

    trajectory = TrajectoryRecord(
        scenario_id=env.spec.scenario_id(),
        seed=env.spec.seed,
        outcome=outcome,
        turns=tuple(turns),
    )
    state = EpisodeState(
        ctx=ctx, retrieval=hits, chain=chain, turn=turn,
        outcome=outcome, trajectory=trajectory,
    )
    return state, trajectory


def _reference_logs(hits: RetrievalSet, bank: MemoryBank, trajectory_store):
    """Pose logs of successful executions behind the hits. Failure precedents
    qualify too: their trajectory records end in the turn that resolved them."""
    if trajectory_store is None:
        return []
    logs = []
    seen = set()
    for entry, _ in _resolve_hits(hits, bank):
        key = entry.metadata.extras.get("trajectory_key")
        if not key or key in seen:
            continue
        seen.add(key)
        traj = trajectory_store.get(str(key))
        if traj is not None and traj.outcome == "success" and traj.pose_log:
            logs.append(traj.pose_log)
    return logs
