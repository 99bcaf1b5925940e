"""Context embedding and contrastive top-k retrieval over the dual bank.

The default embedder is a deterministic feature hasher: instruction token
n-grams plus (shape, color, texture, coarse position) tuples of scene objects
are hashed into signed buckets and L2-normalized. Similar contexts land on
similar vectors without any model weights, and the result is bitwise stable
across processes and platforms. A remote encoder can be swapped in behind the
same interface (SOMA_EMBED_URL).

Retrieval returns the jointly ranked top-k entries across both partitions,
but reserves one slot for the best failure precedent whenever k >= 2 and the
visible failure partition is non-empty: counterfactual evidence is never
crowded out by success exemplars.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from . import language
from .errors import DimensionMismatchError, RemoteUnreachableError, SchemaViolationError
from .memory import EMBEDDING_DIM, MemoryBank, SceneSummary, scene_to_record
from .simenv import GRID_SIZE, Raster

_HASH_KEY = b"soma-embed-v1"
_POSITION_QUANTUM = 8

EMBED_URL_VAR = "SOMA_EMBED_URL"


@dataclass(frozen=True)
class TaskContext:
    """Current observation plus instruction; the retrieval key."""

    scene: SceneSummary
    instruction: str
    step_count: int = 0
    raster: Raster | None = None

    def __post_init__(self):
        if not self.instruction.strip():
            raise SchemaViolationError("instruction", "must be non-empty")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class RetrievalSet:
    """Ranked hits as (entry_id, cosine similarity), scores non-increasing."""

    hits: tuple[tuple[str, float], ...] = ()
    partitions_represented: tuple[int, int] = (0, 0)

    def entry_ids(self) -> tuple[str, ...]:
        return tuple(entry_id for entry_id, _ in self.hits)


def context_features(ctx: TaskContext) -> list[str]:
    tokens = language.tokenize(ctx.instruction)
    feats = [f"t:{t}" for t in tokens]
    feats.extend(f"b:{a} {b}" for a, b in zip(tokens, tokens[1:]))
    for o in sorted(ctx.scene.objects, key=lambda o: o.object_id):
        x, y = o.position % GRID_SIZE, o.position // GRID_SIZE
        qx, qy = x // _POSITION_QUANTUM, y // _POSITION_QUANTUM
        tag = ":target" if o.is_target else ""
        feats.append(f"o:{o.shape}:{o.color}:{o.texture}:{qx}:{qy}{tag}")
    return feats


def _hash_feature(feature: str, dim: int) -> tuple[int, float]:
    digest = blake2b(feature.encode(), digest_size=8, key=_HASH_KEY).digest()
    h = int.from_bytes(digest, "big")
    return h % dim, 1.0 if (h >> 63) & 1 else -1.0


class HashEmbedder:
    """Deterministic signed feature-hash embedder; total on valid contexts."""

    def __init__(self, dim: int = EMBEDDING_DIM):
        self.dim = dim

    def embed(self, ctx: TaskContext) -> EmbeddingVector:
        v = np.zeros(self.dim, dtype=np.float64)
        for feature in context_features(ctx):
            bucket, sign = _hash_feature(feature, self.dim)
            v[bucket] += sign
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            v[0] = 1.0
            norm = 1.0
        v /= norm
        return EmbeddingVector(values=tuple(float(x) for x in v))


class RemoteEmbedder:
    """Adapter for an external encoder endpoint; same interface as the hasher.

    POSTs {"instruction", "scene", "step_count"} and expects {"embedding": [...]}
    of the configured dimension.
    """

    def __init__(self, url: str | None = None, dim: int = EMBEDDING_DIM,
                 transport=None, timeout: float = 30.0):
        self.url = url or os.environ.get(EMBED_URL_VAR, "")
        if not self.url:
            raise RemoteUnreachableError(f"no endpoint configured ({EMBED_URL_VAR})")
        self.dim = dim
        self.timeout = timeout
        self._transport = transport or _http_post_json

    def embed(self, ctx: TaskContext) -> EmbeddingVector:
        payload = {
            "instruction": ctx.instruction,
            "scene": scene_to_record(ctx.scene),
            "step_count": ctx.step_count,
        }
        body = self._transport(self.url, payload, {}, self.timeout)
        values = body.get("embedding")
        if not isinstance(values, list) or len(values) != self.dim:
            raise SchemaViolationError("embedding", f"expected list of {self.dim} numbers")
        v = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise SchemaViolationError("embedding", "zero vector")
        v /= norm
        return EmbeddingVector(values=tuple(float(x) for x in v))


def _http_post_json(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    data = json.dumps(payload).encode()
    req = urllib.request.Request(
        url, data=data, headers={"Content-Type": "application/json", **headers}
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read().decode())
    except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
        raise RemoteUnreachableError(str(exc)) from exc


def build_embedder(kind: str = "hash", dim: int = EMBEDDING_DIM):
    if kind == "hash":
        return HashEmbedder(dim)
    if kind == "remote":
        return RemoteEmbedder(dim=dim)
    raise ValueError(f"unknown embedder kind {kind!r}")


def embed_context(ctx: TaskContext, dim: int = EMBEDDING_DIM) -> EmbeddingVector:
    return HashEmbedder(dim).embed(ctx)


def similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"{a.dim} != {b.dim}")
    value = float(np.dot(np.asarray(a.values), np.asarray(b.values)))
    return max(-1.0, min(1.0, value))


def retrieve_top_k(
    bank: MemoryBank,
    ctx: TaskContext,
    k: int = 5,
    embedder=None,
    include_success: bool = True,
    include_failure: bool = True,
) -> RetrievalSet:
    """Jointly ranked top-k with the contrastive failure reservation.

    Ordering: similarity desc, then created_at desc (newer consolidated
    knowledge wins ties), then entry_id asc. An empty bank is a cold start,
    not an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    embedder = embedder or HashEmbedder(bank.embedding_dim)
    if embedder.dim != bank.embedding_dim:
        raise DimensionMismatchError(
            f"embedder dim {embedder.dim} != bank dim {bank.embedding_dim}"
        )
    pool = []
    if include_success:
        pool.extend(bank.success_partition)
    if include_failure:
        pool.extend(bank.failure_partition)
    if not pool:
        return RetrievalSet()

    query = np.asarray(embedder.embed(ctx).values)
    matrix = np.array([e.embedding for e in pool], dtype=np.float64)
    scores = np.clip(matrix @ query, -1.0, 1.0)

    def sort_key(i: int):
        return (-scores[i], -pool[i].created_at, pool[i].entry_id)

    order = sorted(range(len(pool)), key=sort_key)
    top = order[:k]

    have_failure = any(not pool[i].success for i in top)
    failure_pool = [i for i in order if not pool[i].success]
    if failure_pool and k >= 2 and len(top) == k and not have_failure:
        top = top[: k - 1] + [failure_pool[0]]

    hits = tuple((pool[i].entry_id, float(scores[i])) for i in top)
    succ = sum(1 for i in top if pool[i].success)
    return RetrievalSet(hits=hits, partitions_represented=(succ, len(top) - succ))
