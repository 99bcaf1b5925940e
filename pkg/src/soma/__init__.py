"""Closed-loop robustification testbed around a frozen scripted policy:
contrastive dual-memory retrieval, attribution-driven intervention
orchestration over a discover/invoke tool protocol, and asynchronous
two-stage memory consolidation."""

from .config import LoopConfig
from .memory import (
    Diagnosis,
    ExperienceEntry,
    KeyframeSet,
    MemoryBank,
    MetadataBundle,
    ObjectView,
    SceneSummary,
)
from .orchestrator import (
    DiscrepancyReport,
    InterventionChain,
    ParameterizedIntervention,
    compute_gap,
    match_tools,
    orchestrate,
    parameterize,
    run_episode,
)
from .retrieval import (
    EmbeddingVector,
    HashEmbedder,
    RetrievalSet,
    TaskContext,
    embed_context,
    retrieve_top_k,
    similarity,
)
from .simenv import ScenarioSpec, ScriptedPolicy, TabletopEnv, scripted_policy
from .tools import ToolDescriptor, ToolRegistry, default_registry, discover_tools, invoke

__version__ = "0.1.0"

__all__ = [
    "Diagnosis",
    "DiscrepancyReport",
    "EmbeddingVector",
    "ExperienceEntry",
    "HashEmbedder",
    "InterventionChain",
    "KeyframeSet",
    "LoopConfig",
    "MemoryBank",
    "MetadataBundle",
    "ObjectView",
    "ParameterizedIntervention",
    "RetrievalSet",
    "ScenarioSpec",
    "SceneSummary",
    "ScriptedPolicy",
    "TabletopEnv",
    "TaskContext",
    "ToolDescriptor",
    "ToolRegistry",
    "compute_gap",
    "default_registry",
    "discover_tools",
    "embed_context",
    "invoke",
    "match_tools",
    "orchestrate",
    "parameterize",
    "retrieve_top_k",
    "run_episode",
    "scripted_policy",
    "similarity",
]
