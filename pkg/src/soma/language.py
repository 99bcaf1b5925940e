"""Canonical task grammar and token vocabulary.

The scripted policy, the gap analysis, and the instruction refiner all parse
the same clause grammar:

    pick up the <color> <shape> and place it in|on the <shape>

Clauses chain with ", then". Any token outside the grammar vocabulary makes
an instruction non-canonical; the policy refuses to act on such input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

SHAPES = ("bowl", "plate", "basket", "bottle", "box")
CONTAINER_SHAPES = ("basket",)
COLORS = ("red", "blue", "green", "yellow", "white", "black", "orange", "purple")
TEXTURES = ("smooth", "ribbed", "matte", "glossy", "speckled")

GRAMMAR_WORDS = frozenset(
    ("pick", "up", "the", "and", "place", "it", "in", "on", "then")
    + SHAPES
    + COLORS
)

# Deviation vocabularies used to classify off-grammar tokens.
FILLER_WORDS = frozenset(
    ("umm", "uh", "er", "hmm", "well", "like", "just", "please",
     "maybe", "kinda", "sorta", "okay", "so", "yeah")
)
VERB_SYNONYMS = frozenset(("get", "grab", "fetch", "take", "bring", "gimme", "move"))
VAGUE_WORDS = frozenset(("that", "this", "thing", "stuff", "one", "thingy", "whatsit"))

NOISE_TOKEN = "noise_token"
AMBIGUOUS_REFERENCE = "ambiguous_reference"
NON_CANONICAL_VERB = "non_canonical_verb"

_CLAUSE_RE = re.compile(
    r"^pick up the (?P<color>[a-z]+) (?P<shape>[a-z]+)"
    r" and place it (?P<prep>in|on) the (?P<loc>[a-z]+)$"
)


@dataclass(frozen=True)
class Clause:
    color: str
    shape: str
    prep: str
    location_shape: str


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(re.findall(r"[a-z]+", text.lower()))


def split_clause_texts(text: str) -> tuple[str, ...]:
    parts = re.split(r"\s*,?\s*\bthen\b\s*", text.strip().lower())
    return tuple(p.strip().strip(",") for p in parts if p.strip())


@lru_cache(maxsize=4096)
def parse_instruction(text: str) -> tuple[Clause, ...] | None:
    """Parse a clause-sequence instruction; None if any clause is off-grammar."""
    clauses = []
    for part in split_clause_texts(text):
        m = _CLAUSE_RE.match(part)
        if m is None:
            return None
        color, shape, loc = m.group("color"), m.group("shape"), m.group("loc")
        if color not in COLORS or shape not in SHAPES or loc not in SHAPES:
            return None
        clauses.append(Clause(color, shape, m.group("prep"), loc))
    return tuple(clauses) if clauses else None


def is_canonical(text: str) -> bool:
    return parse_instruction(text) is not None


def render_clause(color: str, shape: str, location_shape: str, prep: str = "in") -> str:
    return f"pick up the {color} {shape} and place it {prep} the {location_shape}"


def join_clauses(texts) -> str:
    return ", then ".join(texts)


def classify_deviations(text: str) -> tuple[tuple[str, str], ...]:
    """Classify every off-grammar token as (token, deviation kind).

    Canonical instructions yield an empty tuple.
    """
    if is_canonical(text):
        return ()
    out = []
    for tok in tokenize(text):
        if tok in GRAMMAR_WORDS:
            continue
        if tok in FILLER_WORDS:
            out.append((tok, NOISE_TOKEN))
        elif tok in VERB_SYNONYMS:
            out.append((tok, NON_CANONICAL_VERB))
        else:
            # vague deictics and unknown descriptors both leave the reference
            # undetermined
            out.append((tok, AMBIGUOUS_REFERENCE))
    return tuple(out)
