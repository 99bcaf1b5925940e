"""Loop configuration as one dataclass, loadable from a JSON file.

Documented keys: k (retrieval width), chunk_steps (N, execution chunk),
turn_cap, gap_weight_visual / gap_weight_semantic / gap_weight_temporal, and
stagnation_window. The remaining knobs are operational defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .memory import EMBEDDING_DIM


@dataclass(frozen=True)
class LoopConfig:
    k: int = 5
    chunk_steps: int = 20
    turn_cap: int = 8
    gap_weight_visual: float = 1.0
    gap_weight_semantic: float = 1.0
    gap_weight_temporal: float = 1.0
    stagnation_window: int = 20
    max_steps_per_turn: int = 600
    segment_exec_steps: int = 110
    segment_buffer_steps: int = 10
    encore_window: int = 15
    encore_wait: int = 5
    n_consol: int = 3
    consol_threshold: float = 0.3
    adopt_threshold: float = 0.3
    keyframe_stride: int = 10
    keyframe_cap: int = 16
    embedding_dim: int = EMBEDDING_DIM
    embedder: str = "hash"
    nominal_steps_per_clause: int = 80

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LoopConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "LoopConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
