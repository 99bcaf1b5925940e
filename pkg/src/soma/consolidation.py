"""Offline dual-stage memory consolidation.

Stage 1 (initial diagnosis) turns a finished trajectory into one experience
entry: outcome, attribution, keyframes, and metadata. Committing is
idempotent under redelivery because entry ids derive from the trajectory
identity. Episodes that recovered after failed turns also mint one failure
entry per failed attempt, keyed on the attempt's pre-intervention context and
carrying the plan that ultimately resolved it; these precedents are what
later retrievals surface as negative counterfactuals.

Stage 2 (cross-task consolidation) retrieves the entries most similar to the
fresh one and revises them in place: misattributed failures with a matching
scene signature adopt the evidence-supported category and the working plan,
and success entries only tighten their step minima. Revisions never flip a
success flag or move an entry across partitions, so refinement happens at the
attribution level, not by deletion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from hashlib import blake2b
from pathlib import Path

from .config import LoopConfig
from .errors import DuplicateEntryError, EmptyTrajectoryError
from .memory import (
    CATEGORY_NONE,
    Diagnosis,
    ExperienceEntry,
    KeyframeSet,
    MemoryBank,
    MetadataBundle,
    SceneSummary,
    record_to_scene,
    scene_to_record,
)
from .reasoner import ReasonerRequest, validate_response
from .retrieval import HashEmbedder, TaskContext
from .serde import canon_line
from .tools import TOOL_PRIORITY


@dataclass(frozen=True)
class TurnRecord:
    """One plan-execute-feedback loop of an episode."""

    turn: int
    instruction_raw: str
    instruction_final: str
    scene_start: SceneSummary
    final_scene: SceneSummary
    active_categories: tuple[str, ...]
    chain: tuple[tuple[str, dict], ...]
    outcome: str
    steps: int
    stagnation_seen: bool
    scene_delta: int
    encore_fired: bool
    keyframes: tuple[tuple[int, SceneSummary], ...] = ()
    pose_log: tuple[tuple[int, int], ...] = ()
    error: str = ""


@dataclass(frozen=True)
class TrajectoryRecord:
    """Raw execution trace of one episode, offline consolidation's input."""

    scenario_id: str
    seed: int
    outcome: str
    turns: tuple[TurnRecord, ...]

    @property
    def pose_log(self) -> tuple[tuple[int, int], ...]:
        for t in self.turns:
            if t.outcome == "success":
                return t.pose_log
        return self.turns[-1].pose_log if self.turns else ()

    def episode_key(self) -> str:
        return f"{self.scenario_id}:{self.seed}"


@dataclass(frozen=True)
class ConsolidationBatch:
    """Stage-2 work unit: the fresh entry plus its most similar neighbors,
    sorted by similarity descending."""

    new_entry: ExperienceEntry
    similar: tuple[tuple[ExperienceEntry, float], ...]

    def __post_init__(self):
        scores = [s for _, s in self.similar]
        if scores != sorted(scores, reverse=True):
            from .errors import SchemaViolationError

            raise SchemaViolationError("similar", "must be sorted by similarity desc")


@dataclass(frozen=True)
class Revision:
    entry_id: str
    field: str
    old: str
    new: str


def _entry_id(key: str) -> str:
    return "exp-" + blake2b(key.encode(), digest_size=6).hexdigest()


def _context_of(scene: SceneSummary, instruction: str, step_count: int = 0) -> TaskContext:
    return TaskContext(scene=scene, instruction=instruction, step_count=step_count)


def init_diag(traj: TrajectoryRecord, reasoner, config: LoopConfig | None = None) -> ExperienceEntry:
    """Stage 1: attribute the finished trajectory and build its experience entry."""
    config = config or LoopConfig()
    if not traj.turns:
        raise EmptyTrajectoryError(traj.episode_key())
    last = traj.turns[-1]
    success = traj.outcome == "success"

    if success:
        diagnosis = Diagnosis(category=CATEGORY_NONE, description="",
                              intervention_plan=last.chain)
    elif traj.outcome == "failure" and last.error:
        diagnosis = Diagnosis(
            category="execution_stagnation",
            description=f"execution error: {last.error}",
            intervention_plan=(),
        )
    else:
        req = ReasonerRequest(
            kind="diagnose",
            payload={
                "outcome": traj.outcome,
                "turns": [
                    {
                        "turn": t.turn,
                        "active_categories": list(t.active_categories),
                        "applied_tools": [name for name, _ in t.chain],
                        "outcome": t.outcome,
                    }
                    for t in traj.turns
                ],
            },
        )
        resp = reasoner.reason(req)
        validate_response(resp, "diagnose")
        category = resp.payload["category"]
        if category == CATEGORY_NONE:
            category = "execution_stagnation"
        diagnosis = Diagnosis(
            category=category,
            description=resp.payload["description"] or "undiagnosed failure",
            intervention_plan=tuple((t, {}) for t in resp.payload["plan_tools"]),
        )

    embedder = HashEmbedder(config.embedding_dim)
    embedding = embedder.embed(
        _context_of(last.final_scene, last.instruction_final, last.steps)
    ).values
    frames = last.keyframes[-config.keyframe_cap:]
    first_step = frames[0][0] if frames else 0
    return ExperienceEntry(
        entry_id=_entry_id(traj.episode_key()),
        embedding=embedding,
        task_text=last.instruction_final,
        success=success,
        diagnosis=diagnosis,
        keyframes=KeyframeSet(frames=frames),
        scene=last.final_scene,
        metadata=MetadataBundle(
            key_frame_range=(first_step, max(first_step, last.steps)),
            success_max_step=max(1, last.steps),
            rollback=any(t.encore_fired for t in traj.turns),
            extras={
                "scenario_id": traj.scenario_id,
                "seed": traj.seed,
                "turns": len(traj.turns),
                "trajectory_key": traj.episode_key(),
            },
        ),
    )


def attempt_entries(traj: TrajectoryRecord, e_new: ExperienceEntry,
                    config: LoopConfig | None = None) -> tuple[ExperienceEntry, ...]:
    """Failure precedents minted from failed turns of an eventually successful
    episode: keyed on the attempt's pre-intervention context, attributed to
    the tool delta that fixed it, and carrying the resolving plan.
    """
    config = config or LoopConfig()
    if traj.outcome != "success":
        return ()
    resolving = traj.turns[-1]
    resolving_tools = {name for name, _ in resolving.chain}
    embedder = HashEmbedder(config.embedding_dim)
    out = []
    for t in traj.turns:
        if t.outcome == "success":
            continue
        delta = resolving_tools - {name for name, _ in t.chain}
        if delta:
            primary = min(delta, key=lambda n: TOOL_PRIORITY.get(n, 99))
        elif resolving_tools:
            primary = min(resolving_tools, key=lambda n: TOOL_PRIORITY.get(n, 99))
        else:
            continue  # nothing distinguishes the attempts; skip
        category = _tool_category(primary)
        if category is None:
            continue
        embedding = embedder.embed(
            _context_of(t.scene_start, t.instruction_raw)
        ).values
        out.append(
            ExperienceEntry(
                entry_id=_entry_id(f"{traj.episode_key()}:a{t.turn}"),
                embedding=embedding,
                task_text=t.instruction_raw,
                success=False,
                diagnosis=Diagnosis(
                    category=category,
                    description=f"attempt {t.turn} failed; resolved by adding {primary}",
                    intervention_plan=resolving.chain,
                ),
                keyframes=KeyframeSet(frames=t.keyframes[-config.keyframe_cap:]),
                scene=t.scene_start,
                metadata=MetadataBundle(
                    # retry bounds for recovery: the span the resolving turn
                    # needed, not the shorter span of the failed attempt
                    key_frame_range=(0, max(1, resolving.steps)),
                    success_max_step=max(1, resolving.steps),
                    rollback=resolving.encore_fired,
                    extras={
                        "scenario_id": traj.scenario_id,
                        "seed": traj.seed,
                        "attempt": t.turn,
                        "trajectory_key": traj.episode_key(),
                    },
                ),
            )
        )
    return tuple(out)


def _tool_category(tool_name: str) -> str | None:
    from .reasoner import CATEGORY_TOOL

    for category, name in CATEGORY_TOOL.items():
        if name == tool_name:
            return category
    return None


def commit(bank: MemoryBank, e_new: ExperienceEntry) -> bool:
    """Insert the fresh entry; redelivery of the same id is a no-op."""
    try:
        bank.insert(e_new)
        return True
    except DuplicateEntryError:
        return False


def gather_batch(bank: MemoryBank, e_new: ExperienceEntry, n_consol: int,
                 threshold: float) -> ConsolidationBatch:
    """Rank every other entry by similarity and keep the gated top-N."""
    import numpy as np

    stored = bank.get(e_new.entry_id)
    others = [e for e in bank.entries() if e.entry_id != stored.entry_id]
    if not others:
        return ConsolidationBatch(new_entry=stored, similar=())
    matrix = np.array([e.embedding for e in others], dtype=np.float64)
    scores = matrix @ np.asarray(stored.embedding)
    ranked = sorted(
        zip(others, scores), key=lambda pair: (-pair[1], -pair[0].created_at, pair[0].entry_id)
    )
    kept = tuple((e, float(s)) for e, s in ranked if s >= threshold)[:n_consol]
    return ConsolidationBatch(new_entry=stored, similar=kept)


def mem_consol(bank: MemoryBank, e_new: ExperienceEntry, n_consol: int,
               reasoner, config: LoopConfig | None = None) -> list[Revision]:
    """Stage 2: revise the most similar historical entries against new evidence."""
    config = config or LoopConfig()
    if e_new.entry_id not in bank:
        raise DuplicateEntryError(f"{e_new.entry_id} must be committed before consolidation")
    batch = gather_batch(bank, e_new, n_consol, config.consol_threshold)
    if not batch.similar:
        return []
    stored = batch.new_entry

    req = ReasonerRequest(
        kind="consolidate",
        payload={
            "new": {
                "entry_id": stored.entry_id,
                "success": stored.success,
                "category": stored.diagnosis.category,
                "plan_tools": [name for name, _ in stored.diagnosis.intervention_plan],
                "signature": [list(pair) for pair in stored.scene.signature()],
                "max_step": stored.metadata.success_max_step,
            },
            "similar": [
                {
                    "entry_id": e.entry_id,
                    "success": e.success,
                    "category": e.diagnosis.category,
                    "signature": [list(pair) for pair in e.scene.signature()],
                    "max_step": e.metadata.success_max_step,
                    "similarity": float(s),
                }
                for e, s in batch.similar
            ],
        },
    )
    resp = reasoner.reason(req)
    validate_response(resp, "consolidate")

    revisions: list[Revision] = []
    for rev in resp.payload["revisions"]:
        entry = bank.get(rev["entry_id"])
        diagnosis = entry.diagnosis
        metadata = entry.metadata
        if rev.get("category") and rev["category"] != diagnosis.category:
            old = diagnosis.category
            plan = stored.diagnosis.intervention_plan if rev.get("transplant") else diagnosis.intervention_plan
            diagnosis = Diagnosis(
                category=rev["category"],
                description=f"revised from {old} given {stored.entry_id}",
                intervention_plan=plan,
            )
            revisions.append(Revision(entry.entry_id, "diagnosis.category", old, rev["category"]))
        if rev.get("success_max_step") is not None and rev["success_max_step"] < metadata.success_max_step:
            old_step = metadata.success_max_step
            metadata = replace(metadata, success_max_step=rev["success_max_step"])
            revisions.append(
                Revision(entry.entry_id, "metadata.success_max_step",
                         str(old_step), str(rev["success_max_step"]))
            )
        if diagnosis is not entry.diagnosis or metadata is not entry.metadata:
            bank.update(entry.entry_id, diagnosis, metadata)
    return revisions


def consolidate_trajectory(bank: MemoryBank, traj: TrajectoryRecord, reasoner,
                           config: LoopConfig | None = None) -> tuple[ExperienceEntry, list[Revision]]:
    """Full offline workflow for one trajectory: diagnose, commit, consolidate."""
    config = config or LoopConfig()
    e_new = init_diag(traj, reasoner, config)
    commit(bank, e_new)
    for attempt in attempt_entries(traj, e_new, config):
        commit(bank, attempt)
    revisions = mem_consol(bank, e_new, config.n_consol, reasoner, config)
    return e_new, revisions


# trajectory persistence (consumed by the CLI and the recovery reference store)

def turn_to_record(t: TurnRecord) -> dict:
    return {
        "turn": t.turn,
        "instruction_raw": t.instruction_raw,
        "instruction_final": t.instruction_final,
        "scene_start": scene_to_record(t.scene_start),
        "final_scene": scene_to_record(t.final_scene),
        "active_categories": list(t.active_categories),
        "chain": [[name, dict(theta)] for name, theta in t.chain],
        "outcome": t.outcome,
        "steps": t.steps,
        "stagnation_seen": t.stagnation_seen,
        "scene_delta": t.scene_delta,
        "encore_fired": t.encore_fired,
        "keyframes": [[step, scene_to_record(s)] for step, s in t.keyframes],
        "pose_log": [list(p) for p in t.pose_log],
        "error": t.error,
    }


def record_to_turn(r: dict) -> TurnRecord:
    return TurnRecord(
        turn=int(r["turn"]),
        instruction_raw=r["instruction_raw"],
        instruction_final=r["instruction_final"],
        scene_start=record_to_scene(r["scene_start"]),
        final_scene=record_to_scene(r["final_scene"]),
        active_categories=tuple(r["active_categories"]),
        chain=tuple((name, dict(theta)) for name, theta in r["chain"]),
        outcome=r["outcome"],
        steps=int(r["steps"]),
        stagnation_seen=bool(r["stagnation_seen"]),
        scene_delta=int(r["scene_delta"]),
        encore_fired=bool(r["encore_fired"]),
        keyframes=tuple((int(step), record_to_scene(s)) for step, s in r["keyframes"]),
        pose_log=tuple(tuple(p) for p in r["pose_log"]),
        error=r.get("error", ""),
    )


def trajectory_to_record(traj: TrajectoryRecord) -> dict:
    return {
        "scenario_id": traj.scenario_id,
        "seed": traj.seed,
        "outcome": traj.outcome,
        "turns": [turn_to_record(t) for t in traj.turns],
    }


def record_to_trajectory(r: dict) -> TrajectoryRecord:
    return TrajectoryRecord(
        scenario_id=r["scenario_id"],
        seed=int(r["seed"]),
        outcome=r["outcome"],
        turns=tuple(record_to_turn(t) for t in r["turns"]),
    )


class TrajectoryStore:
    """Keyed trajectory storage; in memory by default, directory backed if given."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, TrajectoryRecord] = {}
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        safe = key.replace(":", "_").replace("/", "_")
        return self.directory / f"{safe}.traj.json"

    def put(self, traj: TrajectoryRecord) -> str:
        key = traj.episode_key()
        self._cache[key] = traj
        if self.directory:
            self._path(key).write_text(canon_line(trajectory_to_record(traj)))
        return key

    def get(self, key: str) -> TrajectoryRecord | None:
        if key in self._cache:
            return self._cache[key]
        if self.directory:
            path = self._path(key)
            if path.exists():
                traj = record_to_trajectory(json.loads(path.read_text()))
                self._cache[key] = traj
                return traj
        return None

    def all(self) -> list[TrajectoryRecord]:
        if self.directory:
            for path in sorted(self.directory.glob("*.traj.json")):
                traj = record_to_trajectory(json.loads(path.read_text()))
                self._cache[traj.episode_key()] = traj
        return [self._cache[k] for k in sorted(self._cache)]
