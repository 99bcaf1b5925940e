from __future__ import annotations

import pytest

from soma.errors import RemoteUnreachableError, SchemaViolationError
from soma.reasoner import (
    KINDS,
    NullReasoner,
    ReasonerRequest,
    ReasonerResponse,
    RemoteReasoner,
    RuleReasoner,
    build_reasoner,
    validate_response,
)

REGISTRY = [
    {"name": "paint_to_action", "capability_tags": ["visual_shift"]},
    {"name": "eraser", "capability_tags": ["causal_confusion"]},
    {"name": "prompt_refiner", "capability_tags": ["linguistic_ambiguity"]},
    {"name": "chaining_step", "capability_tags": ["temporal_compounding"]},
    {"name": "encore", "capability_tags": ["execution_stagnation"]},
]


def match_payload(active, precedents=(), feedback_turns=0):
    return {
        "active": [{"category": c, "corroborated": f} for c, f in active],
        "registry": REGISTRY,
        "precedent_plans": list(precedents),
        "feedback_turns": feedback_turns,
    }


def test_match_semantic_only_selects_prompt_refiner_with_full_confidence():
    resp = RuleReasoner().reason(
        ReasonerRequest("match", match_payload([("linguistic_ambiguity", False)]))
    )
    assert resp.payload["tools"] == ["prompt_refiner"]
    assert resp.confidence == 1.0


def test_match_empty_report_selects_nothing():
    resp = RuleReasoner().reason(ReasonerRequest("match", match_payload([])))
    assert resp.payload["tools"] == []


def test_match_probes_most_target_proximal_cause_when_ambiguous():
    resp = RuleReasoner().reason(
        ReasonerRequest("match", match_payload(
            [("visual_shift", False), ("causal_confusion", False)]
        ))
    )
    assert resp.payload["tools"] == ["paint_to_action"]


def test_match_escalates_to_all_matched_tools_after_feedback():
    resp = RuleReasoner().reason(
        ReasonerRequest("match", match_payload(
            [("visual_shift", False), ("causal_confusion", False)], feedback_turns=1
        ))
    )
    assert resp.payload["tools"] == ["paint_to_action", "eraser"]


def test_match_adopts_failure_precedent_plan():
    precedent = {"category": "causal_confusion",
                 "tools": ["eraser", "paint_to_action"], "similarity": 0.8}
    resp = RuleReasoner().reason(
        ReasonerRequest("match", match_payload(
            [("visual_shift", False), ("causal_confusion", False)],
            precedents=[precedent],
        ))
    )
    assert set(resp.payload["tools"]) == {"paint_to_action", "eraser"}


def test_match_keeps_corroborated_categories_alongside_probe():
    resp = RuleReasoner().reason(
        ReasonerRequest("match", match_payload(
            [("visual_shift", False), ("execution_stagnation", True)]
        ))
    )
    assert set(resp.payload["tools"]) == {"paint_to_action", "encore"}


def test_rule_reasoner_is_deterministic():
    req = ReasonerRequest("match", match_payload(
        [("visual_shift", False), ("causal_confusion", False)]
    ))
    rule = RuleReasoner()
    assert rule.reason(req) == rule.reason(req)


def test_diagnose_first_unaddressed_category():
    payload = {
        "outcome": "timeout",
        "turns": [
            {"turn": 1, "active_categories": ["linguistic_ambiguity"],
             "applied_tools": [], "outcome": "failure"},
        ],
    }
    resp = RuleReasoner().reason(ReasonerRequest("diagnose", payload))
    assert resp.payload["category"] == "linguistic_ambiguity"
    assert resp.payload["plan_tools"] == ["prompt_refiner"]


def test_diagnose_persistent_failure_defaults_to_stagnation():
    payload = {
        "outcome": "timeout",
        "turns": [
            {"turn": 1, "active_categories": ["linguistic_ambiguity"],
             "applied_tools": ["prompt_refiner"], "outcome": "failure"},
        ],
    }
    resp = RuleReasoner().reason(ReasonerRequest("diagnose", payload))
    assert resp.payload["category"] == "execution_stagnation"


def test_every_rule_response_passes_the_shared_schemas():
    rule = RuleReasoner()
    requests = {
        "match": match_payload([("visual_shift", False)]),
        "parameterize": {"tool": "encore", "scene": {"objects": []},
                         "report": {}, "instruction": "", "precedent": None,
                         "defaults": {}},
        "diagnose": {"outcome": "timeout", "turns": []},
        "consolidate": {"new": {"entry_id": "x", "success": False, "category": "visual_shift",
                                "plan_tools": [], "signature": [], "max_step": 1},
                        "similar": []},
        "refine_text": {"target": {"color": "red", "shape": "bowl"},
                        "container_shape": "basket"},
    }
    for kind in KINDS:
        resp = rule.reason(ReasonerRequest(kind, requests[kind]))
        validate_response(resp, kind)  # both backends satisfy the same contract


def test_null_reasoner_never_selects_tools():
    resp = NullReasoner().reason(ReasonerRequest("match", match_payload(
        [("visual_shift", False)]
    )))
    assert resp.payload["tools"] == []
    assert resp.confidence == 0.0


def test_remote_reasoner_round_trip_with_fake_transport():
    def transport(url, data, headers, timeout):
        assert headers["Authorization"] == "Bearer sekrit"
        return {"kind": "match", "payload": {"tools": ["eraser"]},
                "rationale": "remote said so", "confidence": 0.9}

    remote = RemoteReasoner(url="http://example.invalid/reason", api_key="sekrit",
                            transport=transport)
    resp = remote.reason(ReasonerRequest("match", match_payload([("causal_confusion", False)])))
    assert resp.payload["tools"] == ["eraser"]
    assert resp.confidence == 0.9


def test_remote_reasoner_rejects_malformed_payload_with_field_path():
    def transport(url, data, headers, timeout):
        return {"kind": "match", "payload": {"tools": "eraser"}}

    remote = RemoteReasoner(url="http://example.invalid/reason", api_key="",
                            transport=transport)
    with pytest.raises(SchemaViolationError) as err:
        remote.reason(ReasonerRequest("match", match_payload([("causal_confusion", False)])))
    assert err.value.field == "payload.tools"


def test_remote_reasoner_rejects_kind_mismatch():
    def transport(url, data, headers, timeout):
        return {"kind": "diagnose", "payload": {"tools": []}}

    remote = RemoteReasoner(url="http://example.invalid/reason", api_key="",
                            transport=transport)
    with pytest.raises(SchemaViolationError) as err:
        remote.reason(ReasonerRequest("match", match_payload([])))
    assert err.value.field == "kind"


def test_remote_reasoner_requires_endpoint(monkeypatch):
    monkeypatch.delenv("SOMA_REASONER_URL", raising=False)
    with pytest.raises(RemoteUnreachableError):
        RemoteReasoner()


def test_build_reasoner_kinds():
    assert isinstance(build_reasoner("rules"), RuleReasoner)
    assert isinstance(build_reasoner("null"), NullReasoner)
    with pytest.raises(ValueError):
        build_reasoner("astrology")


def test_validate_response_rejects_out_of_range_confidence():
    resp = ReasonerResponse(kind="match", payload={"tools": []}, confidence=1.5)
    with pytest.raises(SchemaViolationError):
        validate_response(resp, "match")
