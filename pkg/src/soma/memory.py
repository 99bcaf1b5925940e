"""Dual-partition experience bank with canonical on-disk persistence.

Successful executions and failed attempts live in separate partitions of one
bank so retrieval can serve positive guidance and negative counterfactuals
side by side. Entries are immutable records; revisions swap whole entries, so
concurrent readers always see either the old or the new version, never a torn
one.

On disk a bank is a directory holding two files:

    manifest    one canonical JSON line: schema_version, embedding_dim
    entries     one canonical JSON line per entry, in insertion order

Canonical serialization (sorted keys, compact separators, repr floats) makes
save -> load -> save byte-identical.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .errors import (
    CorruptRecordError,
    DimensionMismatchError,
    DuplicateEntryError,
    SchemaViolationError,
    StoreIOError,
    UnknownEntryError,
    UnsupportedSchemaVersionError,
)
from .serde import canon_line

SCHEMA_VERSION = 1
EMBEDDING_DIM = 256
KEYFRAME_STRIDE = 10
KEYFRAME_CAP = 16
UNIT_NORM_TOL = 1e-6

CATEGORY_NONE = "none"
FAILURE_CATEGORIES = (
    "visual_shift",
    "causal_confusion",
    "linguistic_ambiguity",
    "temporal_compounding",
    "execution_stagnation",
)
CATEGORIES = FAILURE_CATEGORIES + (CATEGORY_NONE,)

MANIFEST_FILE = "manifest"
ENTRIES_FILE = "entries"


@dataclass(frozen=True)
class Diagnosis:
    """Failure attribution plus the tool plan that resolved (or should resolve) it.

    Success entries carry category "none" with an empty description; their
    intervention_plan records the chain that worked, so consolidation can
    transplant it into similar failures later.
    """

    category: str = CATEGORY_NONE
    description: str = ""
    intervention_plan: tuple[tuple[str, dict], ...] = ()


@dataclass(frozen=True)
class ObjectView:
    object_id: str
    shape: str
    color: str
    texture: str
    position: int
    is_target: bool = False
    overlay: bool = False


@dataclass(frozen=True)
class SceneSummary:
    """Structured scene as object-attribute records; at most one target."""

    objects: tuple[ObjectView, ...] = ()

    def target(self) -> ObjectView | None:
        for o in self.objects:
            if o.is_target:
                return o
        return None

    def signature(self) -> tuple[tuple[str, str], ...]:
        """Position-free scene signature: sorted multiset of (shape, color)."""
        return tuple(sorted((o.shape, o.color) for o in self.objects))


@dataclass(frozen=True)
class KeyframeSet:
    """Sampled execution snapshots; step indices strictly increasing, at most 16."""

    frames: tuple[tuple[int, SceneSummary], ...] = ()


@dataclass(frozen=True)
class MetadataBundle:
    key_frame_range: tuple[int, int] = (0, 0)
    success_max_step: int = 1
    rollback: bool = False
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperienceEntry:
    entry_id: str
    embedding: tuple[float, ...]
    task_text: str
    success: bool
    diagnosis: Diagnosis
    keyframes: KeyframeSet = KeyframeSet()
    scene: SceneSummary = SceneSummary()
    metadata: MetadataBundle = MetadataBundle()
    created_at: int = 0


def validate_scene(scene: SceneSummary, where: str = "scene") -> None:
    ids = [o.object_id for o in scene.objects]
    if len(set(ids)) != len(ids):
        raise SchemaViolationError(where, "duplicate object ids")
    if sum(1 for o in scene.objects if o.is_target) > 1:
        raise SchemaViolationError(where, "more than one target object")


def validate_entry(entry: ExperienceEntry, embedding_dim: int) -> None:
    if len(entry.embedding) != embedding_dim:
        raise DimensionMismatchError(
            f"entry {entry.entry_id}: embedding dim {len(entry.embedding)} != {embedding_dim}"
        )
    norm = math.sqrt(sum(x * x for x in entry.embedding))
    if abs(norm - 1.0) > UNIT_NORM_TOL:
        raise SchemaViolationError("embedding", f"not unit norm (|v|={norm!r})")
    d = entry.diagnosis
    if d.category not in CATEGORIES:
        raise SchemaViolationError("diagnosis.category", f"unknown category {d.category!r}")
    if entry.success and d.category != CATEGORY_NONE:
        raise SchemaViolationError(
            "diagnosis.category", "success entries must carry category 'none'"
        )
    if not entry.success and d.category == CATEGORY_NONE:
        raise SchemaViolationError(
            "diagnosis.category", "failure entries must carry a failure category"
        )
    if d.category == CATEGORY_NONE and d.description:
        raise SchemaViolationError("diagnosis.description", "must be empty when category is 'none'")
    validate_scene(entry.scene)
    steps = [s for s, _ in entry.keyframes.frames]
    if steps != sorted(set(steps)) or any(s < 0 for s in steps):
        raise SchemaViolationError("keyframes", "step indices must be strictly increasing and >= 0")
    if len(steps) > KEYFRAME_CAP:
        raise SchemaViolationError("keyframes", f"more than {KEYFRAME_CAP} frames")
    for _, snap in entry.keyframes.frames:
        validate_scene(snap, "keyframes.snapshot")
    a, b = entry.metadata.key_frame_range
    if a > b:
        raise SchemaViolationError("metadata.key_frame_range", "start must be <= end")
    if entry.metadata.success_max_step < 1:
        raise SchemaViolationError("metadata.success_max_step", "must be positive")


class MemoryBank:
    """Dual-partition store; single writer, many concurrent readers.

    Read accessors return snapshots, and entries themselves are frozen, so a
    consolidation writer never blocks or tears a concurrent retrieval reader.
    """

    def __init__(self, embedding_dim: int = EMBEDDING_DIM):
        self.embedding_dim = embedding_dim
        self.schema_version = SCHEMA_VERSION
        self._success: list[ExperienceEntry] = []
        self._failure: list[ExperienceEntry] = []
        self._index: dict[str, tuple[str, int]] = {}
        self._seq = 0
        self._lock = threading.Lock()

    # read side

    @property
    def success_partition(self) -> tuple[ExperienceEntry, ...]:
        with self._lock:
            return tuple(self._success)

    @property
    def failure_partition(self) -> tuple[ExperienceEntry, ...]:
        with self._lock:
            return tuple(self._failure)

    def entries(self) -> tuple[ExperienceEntry, ...]:
        with self._lock:
            both = self._success + self._failure
        return tuple(sorted(both, key=lambda e: e.created_at))

    def get(self, entry_id: str) -> ExperienceEntry:
        with self._lock:
            loc = self._index.get(entry_id)
            if loc is None:
                raise UnknownEntryError(entry_id)
            part, i = loc
            return (self._success if part == "success" else self._failure)[i]

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._index

    def __len__(self) -> int:
        return len(self._index)

    # write side

    def insert(self, entry: ExperienceEntry) -> ExperienceEntry:
        """Route the entry to its partition and stamp a fresh sequence number."""
        entry = replace(entry, embedding=tuple(float(x) for x in entry.embedding))
        validate_entry(entry, self.embedding_dim)
        with self._lock:
            if entry.entry_id in self._index:
                raise DuplicateEntryError(entry.entry_id)
            self._seq += 1
            stored = replace(entry, created_at=self._seq)
            part = self._success if stored.success else self._failure
            part.append(stored)
            self._index[stored.entry_id] = (
                "success" if stored.success else "failure",
                len(part) - 1,
            )
        return stored

    def update(
        self,
        entry_id: str,
        diagnosis: Diagnosis,
        metadata: MetadataBundle,
    ) -> ExperienceEntry:
        """Replace only attribution fields; membership and identity are fixed."""
        with self._lock:
            loc = self._index.get(entry_id)
            if loc is None:
                raise UnknownEntryError(entry_id)
            part_name, i = loc
            part = self._success if part_name == "success" else self._failure
            revised = replace(part[i], diagnosis=diagnosis, metadata=metadata)
            validate_entry(revised, self.embedding_dim)
            part[i] = revised
            return revised

    # persistence

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            manifest = canon_line(
                {"embedding_dim": self.embedding_dim, "schema_version": self.schema_version}
            )
            body = "".join(canon_line(entry_to_record(e)) for e in self.entries())
            _atomic_write(directory / MANIFEST_FILE, manifest)
            _atomic_write(directory / ENTRIES_FILE, body)
        except OSError as exc:
            raise StoreIOError(str(exc)) from exc

    @classmethod
    def from_entries(cls, entries: Iterable[ExperienceEntry],
                     embedding_dim: int = EMBEDDING_DIM) -> "MemoryBank":
        """Rebuild a bank preserving existing created_at stamps (clone/load path)."""
        bank = cls(embedding_dim=embedding_dim)
        for entry in sorted(entries, key=lambda e: e.created_at):
            validate_entry(entry, embedding_dim)
            if entry.entry_id in bank._index:
                raise DuplicateEntryError(entry.entry_id)
            part = bank._success if entry.success else bank._failure
            part.append(entry)
            bank._index[entry.entry_id] = (
                "success" if entry.success else "failure",
                len(part) - 1,
            )
            bank._seq = max(bank._seq, entry.created_at)
        return bank

    def clone(self) -> "MemoryBank":
        return MemoryBank.from_entries(self.entries(), self.embedding_dim)

    @classmethod
    def load(cls, directory: str | Path) -> "MemoryBank":
        directory = Path(directory)
        try:
            manifest_text = (directory / MANIFEST_FILE).read_text()
        except OSError as exc:
            raise StoreIOError(f"cannot read manifest: {exc}") from exc
        import json

        try:
            manifest = json.loads(manifest_text)
        except json.JSONDecodeError as exc:
            raise CorruptRecordError(1, f"manifest: {exc}") from exc
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise UnsupportedSchemaVersionError(f"schema_version {version!r}")
        bank = cls(embedding_dim=int(manifest["embedding_dim"]))
        try:
            lines = (directory / ENTRIES_FILE).read_text().split("\n")
        except OSError as exc:
            raise StoreIOError(f"cannot read entries: {exc}") from exc
        if lines and lines[-1] == "":
            lines.pop()
        else:
            # file does not end with a newline: the final record was cut mid-line
            raise CorruptRecordError(len(lines), "truncated record (missing newline)")
        for lineno, line in enumerate(lines, start=1):
            try:
                record = json.loads(line)
                entry = record_to_entry(record)
                validate_entry(entry, bank.embedding_dim)
            except (ValueError, KeyError, TypeError, SchemaViolationError) as exc:
                raise CorruptRecordError(lineno, str(exc)) from exc
            with bank._lock:
                if entry.entry_id in bank._index:
                    raise CorruptRecordError(lineno, f"duplicate id {entry.entry_id}")
                part = bank._success if entry.success else bank._failure
                part.append(entry)
                bank._index[entry.entry_id] = (
                    "success" if entry.success else "failure",
                    len(part) - 1,
                )
                bank._seq = max(bank._seq, entry.created_at)
        return bank


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# operation aliases matching the workflow vocabulary

def insert_entry(bank: MemoryBank, entry: ExperienceEntry) -> ExperienceEntry:
    return bank.insert(entry)


def update_entry(
    bank: MemoryBank, entry_id: str, diagnosis: Diagnosis, metadata: MetadataBundle
) -> ExperienceEntry:
    return bank.update(entry_id, diagnosis, metadata)


def save(bank: MemoryBank, directory: str | Path) -> None:
    bank.save(directory)


def load(directory: str | Path) -> MemoryBank:
    return MemoryBank.load(directory)


# record (de)serialization

def object_to_record(o: ObjectView) -> dict:
    return {
        "color": o.color,
        "is_target": o.is_target,
        "object_id": o.object_id,
        "overlay": o.overlay,
        "position": o.position,
        "shape": o.shape,
        "texture": o.texture,
    }


def record_to_object(r: dict) -> ObjectView:
    return ObjectView(
        object_id=r["object_id"],
        shape=r["shape"],
        color=r["color"],
        texture=r["texture"],
        position=int(r["position"]),
        is_target=bool(r["is_target"]),
        overlay=bool(r.get("overlay", False)),
    )


def scene_to_record(scene: SceneSummary) -> dict:
    return {"objects": [object_to_record(o) for o in scene.objects]}


def record_to_scene(r: dict) -> SceneSummary:
    return SceneSummary(objects=tuple(record_to_object(o) for o in r["objects"]))


def entry_to_record(e: ExperienceEntry) -> dict:
    return {
        "created_at": e.created_at,
        "diagnosis": {
            "category": e.diagnosis.category,
            "description": e.diagnosis.description,
            "intervention_plan": [
                [name, dict(theta)] for name, theta in e.diagnosis.intervention_plan
            ],
        },
        "embedding": list(e.embedding),
        "entry_id": e.entry_id,
        "keyframes": [[step, scene_to_record(snap)] for step, snap in e.keyframes.frames],
        "metadata": {
            "extras": dict(e.metadata.extras),
            "key_frame_range": list(e.metadata.key_frame_range),
            "rollback": e.metadata.rollback,
            "success_max_step": e.metadata.success_max_step,
        },
        "scene": scene_to_record(e.scene),
        "success": e.success,
        "task_text": e.task_text,
    }


def record_to_entry(r: dict) -> ExperienceEntry:
    d = r["diagnosis"]
    m = r["metadata"]
    return ExperienceEntry(
        entry_id=r["entry_id"],
        embedding=tuple(float(x) for x in r["embedding"]),
        task_text=r["task_text"],
        success=bool(r["success"]),
        diagnosis=Diagnosis(
            category=d["category"],
            description=d["description"],
            intervention_plan=tuple(
                (name, dict(theta)) for name, theta in d["intervention_plan"]
            ),
        ),
        keyframes=KeyframeSet(
            frames=tuple((int(step), record_to_scene(snap)) for step, snap in r["keyframes"])
        ),
        scene=record_to_scene(r["scene"]),
        metadata=MetadataBundle(
            key_frame_range=(int(m["key_frame_range"][0]), int(m["key_frame_range"][1])),
            success_max_step=int(m["success_max_step"]),
            rollback=bool(m["rollback"]),
            extras=dict(m["extras"]),
        ),
        created_at=int(r["created_at"]),
    )
