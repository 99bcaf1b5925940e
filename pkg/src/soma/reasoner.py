"""Pluggable deliberation backends behind one request/response contract.

The rule backend is the testable ground truth: deterministic table-driven
outputs with no hidden state. The remote backend serializes the same request
to an HTTP endpoint (SOMA_REASONER_URL, bearer token SOMA_REASONER_KEY) and
schema-validates the reply, rejecting rather than coercing malformed output.
Both backends satisfy identical response schemas, so the whole orchestration
suite runs unchanged against either.

Request kinds and rule tables
-----------------------------
match         select tools whose capability tags intersect the report's
              active categories. Corroborated categories (observed execution
              feedback) are always honored. When several categories rest on
              scene analysis alone and no failure precedent or feedback
              backs any of them, the backend probes conservatively: only the
              highest-ranked category (PROBE_RANK, most target-proximal
              first) is addressed this turn. A matching failure precedent
              unlocks its full recorded plan instead; any turn of feedback
              unlocks every matched tool.
parameterize  derive theta for one tool from the report, the scene, and
              failure-precedent metadata (see table in each helper).
diagnose      attribute a finished trajectory: the first failing turn's
              active category whose addressing tool was absent, in
              PROBE_RANK order; proposes that tool as the plan.
consolidate   cross-task revision decisions for similar entries given fresh
              evidence (category correction + plan transplant on matching
              scene signatures; success entries only tighten step minima).
refine_text   render the canonical instruction for a target and container.
"""

from __future__ import annotations

import json
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass

from . import language
from .errors import RemoteUnreachableError, SchemaViolationError
from .serde import canon_dumps, validate_value
from .tools import CHAIN, ENCORE, ERASER, PAINT, PROMPT, TOOL_PRIORITY

REASONER_URL_VAR = "SOMA_REASONER_URL"
REASONER_KEY_VAR = "SOMA_REASONER_KEY"

KINDS = ("match", "parameterize", "diagnose", "consolidate", "refine_text")

# most target-proximal explanation first; used for probing and diagnosis
PROBE_RANK = (
    "visual_shift",
    "causal_confusion",
    "linguistic_ambiguity",
    "temporal_compounding",
    "execution_stagnation",
)

CATEGORY_TOOL = {
    "visual_shift": PAINT,
    "causal_confusion": ERASER,
    "linguistic_ambiguity": PROMPT,
    "temporal_compounding": CHAIN,
    "execution_stagnation": ENCORE,
}


@dataclass(frozen=True)
class ReasonerRequest:
    kind: str
    payload: dict


@dataclass(frozen=True)
class ReasonerResponse:
    kind: str
    payload: dict
    rationale: str = ""
    confidence: float = 1.0


RESPONSE_SCHEMAS = {
    "match": {
        "type": "object",
        "required": ["tools"],
        "properties": {"tools": {"type": "array", "items": {"type": "string"}}},
    },
    "parameterize": {
        "type": "object",
        "required": ["theta"],
        "properties": {"theta": {"type": ["object", "null"]}, "reason": {"type": "string"}},
    },
    "diagnose": {
        "type": "object",
        "required": ["category", "description", "plan_tools"],
        "properties": {
            "category": {"type": "string"},
            "description": {"type": "string"},
            "plan_tools": {"type": "array", "items": {"type": "string"}},
        },
    },
    "consolidate": {
        "type": "object",
        "required": ["revisions"],
        "properties": {
            "revisions": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["entry_id"],
                    "properties": {
                        "entry_id": {"type": "string"},
                        "category": {"type": ["string", "null"]},
                        "transplant": {"type": "boolean"},
                        "success_max_step": {"type": ["integer", "null"]},
                    },
                },
            }
        },
    },
    "refine_text": {
        "type": "object",
        "required": ["text"],
        "properties": {"text": {"type": "string"}},
    },
}


def validate_response(resp: ReasonerResponse, expected_kind: str) -> None:
    if resp.kind != expected_kind:
        raise SchemaViolationError("kind", f"expected {expected_kind!r}, got {resp.kind!r}")
    if not 0.0 <= resp.confidence <= 1.0:
        raise SchemaViolationError("confidence", "must be in [0, 1]")
    validate_value(RESPONSE_SCHEMAS[expected_kind], resp.payload, "payload")


class RuleReasoner:
    """Deterministic table-driven backend; responses depend only on the request."""

    def reason(self, req: ReasonerRequest) -> ReasonerResponse:
        if req.kind not in KINDS:
            raise SchemaViolationError("kind", f"unknown kind {req.kind!r}")
        handler = getattr(self, f"_{req.kind}")
        payload, rationale = handler(req.payload)
        return ReasonerResponse(kind=req.kind, payload=payload, rationale=rationale)

    # match

    def _match(self, p: dict) -> tuple[dict, str]:
        active = {a["category"]: bool(a.get("corroborated")) for a in p.get("active", ())}
        registry = p.get("registry", ())
        if not active:
            return {"tools": []}, "no active discrepancy"
        matched = [
            r["name"] for r in registry if set(r["capability_tags"]) & set(active)
        ]
        precedent_tools: set[str] = set()
        for prec in p.get("precedent_plans", ()):
            if prec["category"] in active:
                precedent_tools.update(prec["tools"])
        corroborated = {c for c, flag in active.items() if flag}
        gap_only = [c for c in active if c not in corroborated]

        def tags(name: str) -> set[str]:
            for r in registry:
                if r["name"] == name:
                    return set(r["capability_tags"])
            return set()

        if precedent_tools:
            chosen = [
                n for n in matched if n in precedent_tools or tags(n) & corroborated
            ]
            why = "adopted plan from matching failure precedent"
        elif p.get("feedback_turns", 0) >= 1:
            chosen = matched
            why = "prior turn failed; escalating to every matched tool"
        elif len(gap_only) > 1:
            probe = next(c for c in PROBE_RANK if c in gap_only)
            keep = corroborated | {probe}
            chosen = [n for n in matched if tags(n) & keep]
            why = f"ambiguous causes; probing {probe} first"
        else:
            chosen = matched
            why = "single supported cause"
        return {"tools": chosen}, why

    # parameterize

    def _parameterize(self, p: dict) -> tuple[dict, str]:
        tool = p["tool"]
        scene = p.get("scene", {"objects": []})["objects"]
        defaults = p.get("defaults", {})
        if tool == PAINT:
            targets = [o for o in scene if o.get("is_target")]
            if not targets:
                return {"theta": None, "reason": "no target object in scene"}, "dropped"
            theta = {
                "C": defaults.get("overlay_color", "magenta"),
                "M": defaults.get("overlay_material", "marker"),
                "A_mask": [targets[0]["position"]],
            }
            return {"theta": theta}, "overlay on target cells"
        if tool == ERASER:
            novel_ids = {
                item["object_id"]
                for item in p.get("report", {}).get("visual", ())
                if item["kind"] == "novel_object"
            }
            distractors = [
                o for o in scene
                if o["object_id"] in novel_ids
                and not o.get("is_target")
                and o["shape"] not in language.CONTAINER_SHAPES
            ]
            if not distractors:
                return {"theta": None, "reason": "no distractor identified"}, "dropped"
            distractors.sort(key=lambda o: o["object_id"])
            theta = {
                "D": [f"{o['color']} {o['shape']}" for o in distractors],
                "D_masks": [[o["position"]] for o in distractors],
            }
            return {"theta": theta}, f"remove {len(distractors)} distractors"
        if tool == PROMPT:
            text = self._canonical_text(scene)
            if text is None:
                return {"theta": None, "reason": "cannot ground target or container"}, "dropped"
            return {"theta": {"S_origin": text}}, "rewrite to canonical clause"
        if tool == CHAIN:
            clauses = language.parse_instruction(p.get("instruction", ""))
            if not clauses:
                return {"theta": None, "reason": "plan not parseable"}, "dropped"
            exec_steps = defaults.get("exec_steps", 110)
            buffer_steps = defaults.get("buffer_steps", 10)
            horizon = defaults.get("horizon", 600)
            if len(clauses) * (exec_steps + buffer_steps) > horizon:
                return {"theta": None, "reason": "segments exceed horizon"}, "dropped"
            segments = [
                {
                    "text": language.render_clause(c.color, c.shape, c.location_shape, c.prep),
                    "exec_steps": exec_steps,
                    "buffer_steps": buffer_steps,
                }
                for c in clauses
            ]
            return {"theta": {"segments": segments}}, f"{len(segments)} bounded segments"
        if tool == ENCORE:
            prec = p.get("precedent")
            if prec:
                theta = {
                    "s_s": int(prec["key_frame_range"][0]),
                    "s_e": int(prec["key_frame_range"][1]),
                    "N_w": defaults.get("wait_steps", 5),
                }
                return {"theta": theta}, "retry bounds from failure precedent"
            theta = {
                "s_s": 0,
                "s_e": defaults.get("horizon", 600),
                "N_w": defaults.get("wait_steps", 5),
            }
            return {"theta": theta}, "no precedent; whole-turn retry bounds"
        return {"theta": None, "reason": f"unknown tool {tool!r}"}, "dropped"

    @staticmethod
    def _canonical_text(scene: list[dict]) -> str | None:
        targets = [o for o in scene if o.get("is_target")]
        containers = sorted(
            (o for o in scene if o["shape"] in language.CONTAINER_SHAPES),
            key=lambda o: o["object_id"],
        )
        if not targets or not containers:
            return None
        t = targets[0]
        return language.render_clause(t["color"], t["shape"], containers[0]["shape"])

    # diagnose

    def _diagnose(self, p: dict) -> tuple[dict, str]:
        for turn in p.get("turns", ()):
            if turn.get("outcome") == "success":
                continue
            active = turn.get("active_categories", ())
            applied = set(turn.get("applied_tools", ()))
            for category in PROBE_RANK:
                if category in active and CATEGORY_TOOL[category] not in applied:
                    return (
                        {
                            "category": category,
                            "description": f"unresolved {category} in turn {turn.get('turn')}",
                            "plan_tools": [CATEGORY_TOOL[category]],
                        },
                        "first failing turn with an unaddressed category",
                    )
            # everything visible was addressed and the turn still failed
            return (
                {
                    "category": "execution_stagnation",
                    "description": f"interventions ineffective in turn {turn.get('turn')}",
                    "plan_tools": [ENCORE],
                },
                "failure persisted despite addressed categories",
            )
        return {"category": "none", "description": "", "plan_tools": []}, "no failing turn"

    # consolidate

    def _consolidate(self, p: dict) -> tuple[dict, str]:
        new = p["new"]
        revisions = []
        if new.get("success") and new.get("plan_tools"):
            primary = min(new["plan_tools"], key=lambda t: TOOL_PRIORITY.get(t, 99))
            evidence_cat = next(
                (c for c, t in CATEGORY_TOOL.items() if t == primary), None
            )
            for sim in p.get("similar", ()):
                if sim["signature"] != new["signature"]:
                    continue
                if not sim["success"] and evidence_cat and sim["category"] != evidence_cat:
                    revisions.append(
                        {"entry_id": sim["entry_id"], "category": evidence_cat,
                         "transplant": True, "success_max_step": None}
                    )
                elif sim["success"] and sim["max_step"] > new["max_step"]:
                    revisions.append(
                        {"entry_id": sim["entry_id"], "category": None,
                         "transplant": False, "success_max_step": new["max_step"]}
                    )
        return {"revisions": revisions}, f"{len(revisions)} differential revisions"

    # refine_text

    def _refine_text(self, p: dict) -> tuple[dict, str]:
        t = p["target"]
        text = language.render_clause(t["color"], t["shape"], p["container_shape"])
        return {"text": text}, "canonical rendering"


class NullReasoner:
    """Disabled deliberation: never selects a tool. Used by no-memory baselines."""

    def reason(self, req: ReasonerRequest) -> ReasonerResponse:
        empty = {
            "match": {"tools": []},
            "parameterize": {"theta": None, "reason": "reasoner disabled"},
            "diagnose": {"category": "execution_stagnation",
                         "description": "undiagnosed failure", "plan_tools": []},
            "consolidate": {"revisions": []},
            "refine_text": {"text": req.payload.get("instruction", "") or "noop"},
        }
        if req.kind not in empty:
            raise SchemaViolationError("kind", f"unknown kind {req.kind!r}")
        return ReasonerResponse(kind=req.kind, payload=empty[req.kind],
                                rationale="disabled", confidence=0.0)


class RemoteReasoner:
    """HTTP adapter for an external multimodal reasoning engine.

    At most max_in_flight requests run concurrently, each bounded by the
    per-request timeout. Invalid replies are rejected with the offending
    field path, never coerced.
    """

    def __init__(self, url: str | None = None, api_key: str | None = None,
                 transport=None, timeout: float = 30.0, max_in_flight: int = 4):
        self.url = url or os.environ.get(REASONER_URL_VAR, "")
        if not self.url:
            raise RemoteUnreachableError(f"no endpoint configured ({REASONER_URL_VAR})")
        self.api_key = api_key if api_key is not None else os.environ.get(REASONER_KEY_VAR, "")
        self.timeout = timeout
        self._transport = transport or self._http_post
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def reason(self, req: ReasonerRequest) -> ReasonerResponse:
        if req.kind not in KINDS:
            raise SchemaViolationError("kind", f"unknown kind {req.kind!r}")
        with self._gate:
            body = self._transport(
                self.url,
                canon_dumps({"kind": req.kind, "payload": req.payload}).encode(),
                {"Authorization": f"Bearer {self.api_key}"},
                self.timeout,
            )
        if not isinstance(body, dict):
            raise SchemaViolationError("response", "expected a JSON object")
        for name in ("kind", "payload"):
            if name not in body:
                raise SchemaViolationError(name, "missing required field")
        resp = ReasonerResponse(
            kind=body["kind"],
            payload=body["payload"],
            rationale=str(body.get("rationale", "")),
            confidence=float(body.get("confidence", 1.0)),
        )
        validate_response(resp, req.kind)
        return resp

    @staticmethod
    def _http_post(url: str, data: bytes, headers: dict, timeout: float) -> dict:
        req = urllib.request.Request(
            url, data=data, headers={"Content-Type": "application/json", **headers}
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise RemoteUnreachableError(str(exc)) from exc


def build_reasoner(kind: str = "rules"):
    if kind == "rules":
        return RuleReasoner()
    if kind == "null":
        return NullReasoner()
    if kind == "remote":
        return RemoteReasoner()
    raise ValueError(f"unknown reasoner kind {kind!r}")
