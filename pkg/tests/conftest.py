from __future__ import annotations

import math
import random

import numpy as np
import pytest

from soma.memory import (
    Diagnosis,
    ExperienceEntry,
    KeyframeSet,
    MemoryBank,
    MetadataBundle,
    ObjectView,
    SceneSummary,
)

DIM = 16


def unit_axis(axis: int, dim: int = DIM) -> tuple[float, ...]:
    v = [0.0] * dim
    v[axis % dim] = 1.0
    return tuple(v)


def random_unit(rng: random.Random, dim: int = DIM) -> tuple[float, ...]:
    v = np.array([rng.gauss(0, 1) for _ in range(dim)])
    n = float(np.linalg.norm(v))
    if n == 0:
        return unit_axis(0, dim)
    return tuple(float(x) for x in v / n)


def make_scene(*specs, target: int | None = 0) -> SceneSummary:
    """specs are (shape, color, texture, position) tuples."""
    objs = []
    for i, (shape, color, texture, position) in enumerate(specs):
        objs.append(
            ObjectView(
                object_id=f"o{i}",
                shape=shape,
                color=color,
                texture=texture,
                position=position,
                is_target=(i == target),
            )
        )
    return SceneSummary(objects=tuple(objs))


def make_entry(
    entry_id: str,
    success: bool = True,
    embedding=None,
    dim: int = DIM,
    category: str | None = None,
    plan=(),
    scene: SceneSummary | None = None,
    task_text: str = "pick up the red bowl and place it in the basket",
    max_step: int = 100,
    key_frame_range=(0, 100),
    extras=None,
) -> ExperienceEntry:
    if embedding is None:
        embedding = unit_axis(0, dim)
    if category is None:
        category = "none" if success else "causal_confusion"
    description = "" if category == "none" else f"planted {category}"
    return ExperienceEntry(
        entry_id=entry_id,
        embedding=tuple(embedding),
        task_text=task_text,
        success=success,
        diagnosis=Diagnosis(category=category, description=description,
                            intervention_plan=tuple(plan)),
        keyframes=KeyframeSet(),
        scene=scene if scene is not None else make_scene(("bowl", "red", "smooth", 40)),
        metadata=MetadataBundle(
            key_frame_range=tuple(key_frame_range),
            success_max_step=max_step,
            rollback=False,
            extras=dict(extras or {}),
        ),
    )


@pytest.fixture
def small_bank() -> MemoryBank:
    bank = MemoryBank(embedding_dim=DIM)
    for i in range(4):
        bank.insert(make_entry(f"s{i}", success=True, embedding=unit_axis(i)))
    for i in range(3):
        bank.insert(make_entry(f"f{i}", success=False, embedding=unit_axis(4 + i)))
    return bank


def assert_unit(values, tol: float = 1e-6) -> None:
    norm = math.sqrt(sum(x * x for x in values))
    assert abs(norm - 1.0) <= tol
