"""The five intervention tools as deterministic transforms, plus their registry.

Each tool edits exactly one artifact class: paint and eraser rewrite the
observation (scene summary + raster), the prompt refiner rewrites the
instruction, chaining rewrites the plan, and encore rewrites execution state.
Paint and eraser are idempotent, so an executor may re-apply them to every
fresh observation to keep an intervention in force for a whole turn.

The registry is open: a sixth tool needs only a descriptor and a handler, and
the orchestrator will match it through its capability tags like any other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from . import language
from .errors import (
    GrammarError,
    HorizonBudgetError,
    InvalidParamsError,
    MaskBoundsError,
    MaskOverlapsTargetError,
    SchemaViolationError,
    UnknownDistractorError,
    UnknownToolError,
)
from .memory import ObjectView, SceneSummary, record_to_scene, scene_to_record
from .serde import validate_value
from .simenv import ExecutionState, Raster, footprint_for

PAINT = "paint_to_action"
ERASER = "eraser"
PROMPT = "prompt_refiner"
CHAIN = "chaining_step"
ENCORE = "encore"
TOOL_NAMES = (PAINT, ERASER, PROMPT, CHAIN, ENCORE)

# chain synthesis priority classes: interference removal first, perceptual
# cues before input rewrites, plan surgery before physical recovery, recovery
# last
TOOL_PRIORITY = {ERASER: 0, PAINT: 1, PROMPT: 2, CHAIN: 3, ENCORE: 4}

ENCORE_WINDOW = 15
OVERLAY_PREFIX = "hl"


# parameter records (theta)

@dataclass(frozen=True)
class PaintParams:
    C: str
    M: str
    A_mask: tuple[int, ...]

    def to_theta(self) -> dict:
        return {"C": self.C, "M": self.M, "A_mask": sorted(self.A_mask)}


@dataclass(frozen=True)
class EraserParams:
    D: tuple[str, ...]
    D_masks: tuple[tuple[int, ...], ...]

    def to_theta(self) -> dict:
        return {"D": list(self.D), "D_masks": [sorted(m) for m in self.D_masks]}


@dataclass(frozen=True)
class PromptParams:
    S_origin: str

    def to_theta(self) -> dict:
        return {"S_origin": self.S_origin}


@dataclass(frozen=True)
class Segment:
    text: str
    exec_steps: int
    buffer_steps: int


@dataclass(frozen=True)
class ChainParams:
    segments: tuple[Segment, ...]

    def to_theta(self) -> dict:
        return {
            "segments": [
                {"text": s.text, "exec_steps": s.exec_steps, "buffer_steps": s.buffer_steps}
                for s in self.segments
            ]
        }


@dataclass(frozen=True)
class EncoreParams:
    s_s: int
    s_e: int
    N_w: int

    def to_theta(self) -> dict:
        return {"s_s": self.s_s, "s_e": self.s_e, "N_w": self.N_w}


def params_from_theta(tool: str, theta: dict):
    if tool == PAINT:
        return PaintParams(C=theta["C"], M=theta["M"], A_mask=tuple(theta["A_mask"]))
    if tool == ERASER:
        return EraserParams(
            D=tuple(theta["D"]), D_masks=tuple(tuple(m) for m in theta["D_masks"])
        )
    if tool == PROMPT:
        return PromptParams(S_origin=theta["S_origin"])
    if tool == CHAIN:
        return ChainParams(
            segments=tuple(
                Segment(s["text"], int(s["exec_steps"]), int(s["buffer_steps"]))
                for s in theta["segments"]
            )
        )
    if tool == ENCORE:
        return EncoreParams(s_s=int(theta["s_s"]), s_e=int(theta["s_e"]), N_w=int(theta["N_w"]))
    raise UnknownToolError(tool)


@dataclass(frozen=True)
class SubtaskSequence:
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class RecoveredState:
    """Recovery directives for the executor, derived purely from inputs."""

    pose: tuple[int, int]
    wait_steps: int
    reset_to_step: int | None = None
    used_fallback: bool = False
    counters_reset: bool = True
    rollback_deltas: tuple[tuple[float, float], ...] = ()


# transforms

def _check_mask_bounds(mask, raster: Raster, field: str) -> None:
    size = raster.width * raster.height
    for cell in mask:
        if not 0 <= cell < size:
            raise MaskBoundsError(f"{field}: cell {cell} outside {size}-cell raster")


def paint_to_action(
    scene: SceneSummary, raster: Raster, params: PaintParams
) -> tuple[SceneSummary, Raster]:
    """Overlay a high-contrast cue on the masked cells and mark covered objects.

    Only cells in A_mask change; applying the same overlay twice is a no-op.
    """
    if not params.A_mask:
        raise MaskBoundsError("A_mask must be non-empty")
    _check_mask_bounds(params.A_mask, raster, "A_mask")
    code = f"{OVERLAY_PREFIX}:{params.C}:{params.M}"
    cells = list(raster.cells)
    for cell in params.A_mask:
        cells[cell] = code
    mask = set(params.A_mask)
    objects = tuple(
        replace(o, overlay=True) if o.position in mask else o for o in scene.objects
    )
    return SceneSummary(objects=objects), Raster(raster.width, raster.height, tuple(cells))


def eraser(
    scene: SceneSummary, raster: Raster, params: EraserParams
) -> tuple[SceneSummary, Raster]:
    """Remove described distractors and fill their cells from the background.

    Masks must stay clear of the target; a mask whose cells are already empty
    is treated as erased (idempotence), while a mask covering an object that
    does not match its description is rejected.
    """
    if len(params.D) != len(params.D_masks):
        raise SchemaViolationError("D_masks", "must pair one mask per distractor")
    target = scene.target()
    target_cells = set(footprint_for(target.shape, target.position)) if target else set()
    removed: list[ObjectView] = []
    for desc, mask in zip(params.D, params.D_masks):
        _check_mask_bounds(mask, raster, "D_masks")
        mask_set = set(mask)
        if mask_set & target_cells:
            raise MaskOverlapsTargetError(f"mask for {desc!r} touches the target")
        matched = [
            o for o in scene.objects
            if not o.is_target and o.position in mask_set
            and f"{o.color} {o.shape}" == desc
        ]
        if matched:
            removed.extend(matched)
            continue
        occupants = [
            o for o in scene.objects if not o.is_target and o.position in mask_set
        ]
        if occupants:
            raise UnknownDistractorError(
                f"{desc!r} does not describe any object under its mask"
            )
        # nothing under the mask: already erased
    if not removed:
        return scene, raster

    removed_ids = {o.object_id for o in removed}
    kept = tuple(o for o in scene.objects if o.object_id not in removed_ids)
    erased_cells = {
        c for o in removed for c in footprint_for(o.shape, o.position)
    }
    occupied = {
        c for o in kept for c in footprint_for(o.shape, o.position)
    }
    sources = [
        c for c in range(raster.width * raster.height)
        if c not in occupied and c not in erased_cells
    ]
    cells = list(raster.cells)
    for cell in sorted(erased_cells):
        cells[cell] = raster.cells[_nearest_cell(cell, sources, raster.width)]
    return SceneSummary(objects=kept), Raster(raster.width, raster.height, tuple(cells))


def _nearest_cell(cell: int, sources: list[int], width: int) -> int:
    x, y = cell % width, cell // width

    def key(c: int):
        cx, cy = c % width, c // width
        return ((cx - x) ** 2 + (cy - y) ** 2, cy, cx)

    return min(sources, key=key)


def prompt_refiner(instruction: str, params: PromptParams) -> str:
    """Swap a noisy instruction for its grammar-valid simplification.

    The caller is responsible for logging the original alongside the result.
    """
    if not language.is_canonical(params.S_origin):
        raise GrammarError(f"not in canonical grammar: {params.S_origin!r}")
    return params.S_origin


def chaining_step(plan_text: str, params: ChainParams, horizon: int) -> SubtaskSequence:
    """Cut a macro plan into bounded execution segments with buffer resets."""
    if not params.segments:
        raise SchemaViolationError("segments", "must be non-empty")
    for i, seg in enumerate(params.segments):
        if seg.exec_steps <= 0:
            raise SchemaViolationError(f"segments[{i}].exec_steps", "must be positive")
        if seg.buffer_steps < 0:
            raise SchemaViolationError(f"segments[{i}].buffer_steps", "must be >= 0")
    budget = sum(s.exec_steps + s.buffer_steps for s in params.segments)
    if budget > horizon:
        raise HorizonBudgetError(f"segment budget {budget} exceeds horizon {horizon}")
    macro = language.parse_instruction(plan_text)
    if macro is not None:
        covered: list = []
        for seg in params.segments:
            clauses = language.parse_instruction(seg.text)
            if clauses is None:
                raise SchemaViolationError("segments", f"off-grammar segment {seg.text!r}")
            covered.extend(clauses)
        if sorted(map(str, covered)) != sorted(map(str, macro)):
            raise SchemaViolationError("segments", "segments do not cover the macro plan")
    return SubtaskSequence(segments=params.segments)


def encore(
    state: ExecutionState,
    params: EncoreParams,
    success_refs,
    window: int = ENCORE_WINDOW,
) -> RecoveredState:
    """Key-state recovery: reset counters, roll the pose back along the
    averaged reverse tail of matching success trajectories, then wait N_w.

    With no reference available the transform falls back to a plain
    reset-to-keyframe at s_s, flagged for the caller. When the current step is
    already past the retry bound s_e, rollback cannot fit a retry and the
    transform requests the keyframe reset instead.
    """
    if params.s_s > params.s_e:
        raise SchemaViolationError("params.s_s", "must be <= s_e")
    if params.N_w < 0:
        raise SchemaViolationError("params.N_w", "must be >= 0")
    if params.s_s > state.step_index:
        raise SchemaViolationError("params.s_s", "must be <= current step")

    logs = []
    for ref in success_refs or ():
        log = getattr(ref, "pose_log", ref)
        if len(log) >= 2:
            logs.append([tuple(p) for p in log])
    if not logs:
        return RecoveredState(
            pose=state.pose,
            wait_steps=params.N_w,
            reset_to_step=params.s_s,
            used_fallback=True,
        )
    if state.step_index > params.s_e:
        return RecoveredState(pose=state.pose, wait_steps=params.N_w, reset_to_step=params.s_s)

    depth = min(
        window,
        state.step_index - params.s_s,
        min(len(log) - 1 for log in logs),
    )
    depth = max(depth, 0)
    deltas: list[tuple[float, float]] = []
    for j in range(1, depth + 1):
        dx = sum(log[-1 - j][0] - log[-j][0] for log in logs) / len(logs)
        dy = sum(log[-1 - j][1] - log[-j][1] for log in logs) / len(logs)
        deltas.append((dx, dy))
    px = state.pose[0] + sum(d[0] for d in deltas)
    py = state.pose[1] + sum(d[1] for d in deltas)
    pose = (_round_half_away(px), _round_half_away(py))
    return RecoveredState(pose=pose, wait_steps=params.N_w, rollback_deltas=tuple(deltas))


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


# wire-level schemas and registry

_SCENE_SCHEMA = {
    "type": "object",
    "required": ["objects"],
    "properties": {
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["object_id", "shape", "color", "texture", "position", "is_target"],
                "properties": {
                    "object_id": {"type": "string"},
                    "shape": {"type": "string"},
                    "color": {"type": "string"},
                    "texture": {"type": "string"},
                    "position": {"type": "integer"},
                    "is_target": {"type": "boolean"},
                    "overlay": {"type": "boolean"},
                },
            },
        }
    },
}
_RASTER_SCHEMA = {
    "type": "object",
    "required": ["width", "height", "cells"],
    "properties": {
        "width": {"type": "integer"},
        "height": {"type": "integer"},
        "cells": {"type": "array", "items": {"type": "string"}},
    },
}
_OBS_SCHEMA = {
    "type": "object",
    "required": ["scene", "raster"],
    "properties": {"scene": _SCENE_SCHEMA, "raster": _RASTER_SCHEMA},
}
_CELLS = {"type": "array", "items": {"type": "integer"}}

PARAM_SCHEMAS = {
    PAINT: {
        "type": "object",
        "required": ["observation", "params"],
        "properties": {
            "observation": _OBS_SCHEMA,
            "params": {
                "type": "object",
                "required": ["C", "M", "A_mask"],
                "properties": {
                    "C": {"type": "string"},
                    "M": {"type": "string"},
                    "A_mask": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                },
            },
        },
    },
    ERASER: {
        "type": "object",
        "required": ["observation", "params"],
        "properties": {
            "observation": _OBS_SCHEMA,
            "params": {
                "type": "object",
                "required": ["D", "D_masks"],
                "properties": {
                    "D": {"type": "array", "items": {"type": "string"}},
                    "D_masks": {"type": "array", "items": _CELLS},
                },
            },
        },
    },
    PROMPT: {
        "type": "object",
        "required": ["instruction", "params"],
        "properties": {
            "instruction": {"type": "string"},
            "params": {
                "type": "object",
                "required": ["S_origin"],
                "properties": {"S_origin": {"type": "string"}},
            },
        },
    },
    CHAIN: {
        "type": "object",
        "required": ["plan", "params", "horizon"],
        "properties": {
            "plan": {"type": "string"},
            "horizon": {"type": "integer"},
            "params": {
                "type": "object",
                "required": ["segments"],
                "properties": {
                    "segments": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["text", "exec_steps", "buffer_steps"],
                            "properties": {
                                "text": {"type": "string"},
                                "exec_steps": {"type": "integer"},
                                "buffer_steps": {"type": "integer"},
                            },
                        },
                    }
                },
            },
        },
    },
    ENCORE: {
        "type": "object",
        "required": ["state", "params"],
        "properties": {
            "state": {
                "type": "object",
                "required": ["pose", "step_index", "stagnant_steps", "pose_history"],
                "properties": {
                    "pose": {"type": "array", "items": {"type": "integer"}},
                    "held": {"type": ["string", "null"]},
                    "step_index": {"type": "integer"},
                    "stagnant_steps": {"type": "integer"},
                    "pose_history": {"type": "array", "items": _CELLS},
                },
            },
            "params": {
                "type": "object",
                "required": ["s_s", "s_e", "N_w"],
                "properties": {
                    "s_s": {"type": "integer"},
                    "s_e": {"type": "integer"},
                    "N_w": {"type": "integer"},
                },
            },
            "success_refs": {"type": "array", "items": {"type": "array", "items": _CELLS}},
            "window": {"type": "integer"},
        },
    },
}

CAPABILITY_TAGS = {
    PAINT: ("visual_shift",),
    ERASER: ("causal_confusion",),
    PROMPT: ("linguistic_ambiguity",),
    CHAIN: ("temporal_compounding",),
    ENCORE: ("execution_stagnation",),
}

DESCRIPTIONS = {
    PAINT: "Overlay a high-contrast cue on the target region to defeat "
           "lookalike confusion and appearance drift.",
    ERASER: "Remove described distractor objects from the observation and "
            "fill their cells from the surrounding background.",
    PROMPT: "Replace a noisy instruction with its grammar-valid simplification.",
    CHAIN: "Split a long plan into bounded segments separated by buffer resets.",
    ENCORE: "Recover from execution stagnation by counter reset, averaged "
            "reverse-trajectory rollback, and a settling wait.",
}

APPLIES_TO = {
    PAINT: "observation",
    ERASER: "observation",
    PROMPT: "instruction",
    CHAIN: "plan",
    ENCORE: "state",
}


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    capability_tags: tuple[str, ...]
    description: str
    parameter_schema: dict
    # which artifact the tool rewrites; executors dispatch on this, so new
    # tools need no orchestrator changes
    applies_to: str = "observation"


def raster_to_record(r: Raster) -> dict:
    return {"width": r.width, "height": r.height, "cells": list(r.cells)}


def record_to_raster(rec: dict) -> Raster:
    return Raster(int(rec["width"]), int(rec["height"]), tuple(rec["cells"]))


class ToolRegistry:
    """Name -> (descriptor, wire handler); handles discovery and invocation."""

    def __init__(self):
        self._descriptors: dict[str, ToolDescriptor] = {}
        self._handlers: dict[str, callable] = {}

    def register(self, descriptor: ToolDescriptor, handler) -> None:
        if descriptor.name in self._descriptors:
            raise ValueError(f"tool {descriptor.name!r} already registered")
        self._descriptors[descriptor.name] = descriptor
        self._handlers[descriptor.name] = handler

    def descriptors(self) -> tuple[ToolDescriptor, ...]:
        return tuple(self._descriptors.values())

    def get(self, name: str) -> ToolDescriptor:
        if name not in self._descriptors:
            raise UnknownToolError(name)
        return self._descriptors[name]

    def invoke(self, name: str, arguments: dict) -> dict:
        if name not in self._handlers:
            raise UnknownToolError(name)
        try:
            validate_value(self._descriptors[name].parameter_schema, arguments, "arguments")
        except SchemaViolationError as exc:
            raise InvalidParamsError(exc.field, exc.message) from exc
        return self._handlers[name](arguments)


def _handle_paint(args: dict) -> dict:
    scene = record_to_scene(args["observation"]["scene"])
    raster = record_to_raster(args["observation"]["raster"])
    params = params_from_theta(PAINT, args["params"])
    scene2, raster2 = paint_to_action(scene, raster, params)
    return {"observation": {"scene": scene_to_record(scene2), "raster": raster_to_record(raster2)}}


def _handle_eraser(args: dict) -> dict:
    scene = record_to_scene(args["observation"]["scene"])
    raster = record_to_raster(args["observation"]["raster"])
    params = params_from_theta(ERASER, args["params"])
    scene2, raster2 = eraser(scene, raster, params)
    return {"observation": {"scene": scene_to_record(scene2), "raster": raster_to_record(raster2)}}


def _handle_prompt(args: dict) -> dict:
    refined = prompt_refiner(args["instruction"], params_from_theta(PROMPT, args["params"]))
    return {"text": refined, "original": args["instruction"]}


def _handle_chain(args: dict) -> dict:
    seq = chaining_step(args["plan"], params_from_theta(CHAIN, args["params"]), args["horizon"])
    return {
        "segments": [
            {"text": s.text, "exec_steps": s.exec_steps, "buffer_steps": s.buffer_steps}
            for s in seq.segments
        ]
    }


def _handle_encore(args: dict) -> dict:
    s = args["state"]
    state = ExecutionState(
        pose=tuple(s["pose"]),
        held=s.get("held"),
        step_index=s["step_index"],
        stagnant_steps=s["stagnant_steps"],
        pose_history=tuple(tuple(p) for p in s["pose_history"]),
    )
    refs = [tuple(tuple(p) for p in log) for log in args.get("success_refs", [])]
    rec = encore(
        state,
        params_from_theta(ENCORE, args["params"]),
        refs,
        window=args.get("window", ENCORE_WINDOW),
    )
    return {
        "pose": list(rec.pose),
        "wait_steps": rec.wait_steps,
        "reset_to_step": rec.reset_to_step,
        "used_fallback": rec.used_fallback,
        "counters_reset": rec.counters_reset,
        "rollback_deltas": [list(d) for d in rec.rollback_deltas],
    }


_HANDLERS = {
    PAINT: _handle_paint,
    ERASER: _handle_eraser,
    PROMPT: _handle_prompt,
    CHAIN: _handle_chain,
    ENCORE: _handle_encore,
}


def default_registry() -> ToolRegistry:
    registry = ToolRegistry()
    for name in TOOL_NAMES:
        registry.register(
            ToolDescriptor(
                name=name,
                capability_tags=CAPABILITY_TAGS[name],
                description=DESCRIPTIONS[name],
                parameter_schema=PARAM_SCHEMAS[name],
                applies_to=APPLIES_TO[name],
            ),
            _HANDLERS[name],
        )
    return registry


def discover_tools(registry: ToolRegistry | None = None) -> tuple[ToolDescriptor, ...]:
    return (registry or default_registry()).descriptors()


def invoke(name: str, arguments: dict, registry: ToolRegistry | None = None) -> dict:
    return (registry or default_registry()).invoke(name, arguments)
