"""
Deterministic chain-of-thought backend for the synthetic motion families.

A description is split into clauses on "then"; each clause is matched to a
family by keyword and mapped to a canonical atomic step. Clauses that match
no family become a step equal to their normalized text.
"""
from __future__ import annotations

import re
from typing import List, Optional

import numpy as np

from app.utils.seeding import derive_seed
from app.utils.text import normalize_text, normalized_words

_CLAUSE_SPLIT = re.compile(r"\bthen\b", re.IGNORECASE)

# checked in order: "walks in a circle" must resolve before plain walking
FAMILY_KEYWORDS: tuple[tuple[str, frozenset[str]], ...] = (
    ("walk-circle", frozenset({"circle", "circles", "loop", "loops"})),
    ("wave-arm", frozenset({"wave", "waves", "waving", "goodbye"})),
    ("squat", frozenset({"squat", "squats", "squatting"})),
    ("jump", frozenset({"jump", "jumps", "jumping", "hop", "hops"})),
    ("turn-in-place", frozenset({"turn", "turns", "turning", "spin", "spins"})),
    ("walk-straight", frozenset({"walk", "walks", "walking", "steps", "foot", "strolls"})),
)

_OPENINGS = (
    'The user wants me to break down "{desc}" into simple steps if necessary.',
    'The user describes "{desc}". I should split it into atomic motions.',
    'Let me decompose "{desc}" into simple, independent actions.',
)
_SINGLE = (
    "This is already a single, recognizable motion, so it stays one step.",
    "Only one action is described, so no further breakdown is needed.",
)
_MULTI = (
    "There are {n} actions here and I will keep them in temporal order.",
    "I can see {n} distinct actions; each one is a simple motor action in sequence.",
)
_CLOSING = "Therefore, the correct response would be:"


def split_clauses(description: str) -> List[str]:
    clauses = [c.strip(" ,.;") for c in _CLAUSE_SPLIT.split(description)]
    return [c for c in clauses if normalize_text(c)]


def detect_family(clause: str) -> Optional[str]:
    words = set(normalized_words(clause))
    for family, keywords in FAMILY_KEYWORDS:
        if words & keywords:
            return family
    return None


def canonical_step(clause: str) -> str:
    words = set(normalized_words(clause))
    family = detect_family(clause)
    side = "left" if "left" in words else "right" if "right" in words else None
    if family == "walk-straight":
        return "walk backward" if "backward" in words else "walk forward"
    if family == "walk-circle":
        return "walk in a circle"
    if family == "wave-arm":
        return f"wave the {side} hand" if side else "wave hand"
    if family == "squat":
        return "squat down and stand up"
    if family == "turn-in-place":
        return f"turn to the {side}" if side else "turn around"
    if family == "jump":
        return "jump in place"
    return normalize_text(clause)


def template_cot(description: str, seed: int = 0) -> str:
    """Canned ``<think>`` answer; equal (description, seed) give identical text."""
    clauses = split_clauses(description) or [description]
    steps = [canonical_step(c) for c in clauses]
    rng = np.random.default_rng(derive_seed(seed, "template-cot", normalize_text(description)))
    desc = description.strip().rstrip(".")
    narration = [str(rng.choice(_OPENINGS)).format(desc=desc)]
    if len(steps) == 1:
        narration.append(str(rng.choice(_SINGLE)))
    else:
        narration.append(str(rng.choice(_MULTI)).format(n=len(steps)))
    numbered = "\n".join(f"{i}. {step}." for i, step in enumerate(steps, start=1))
    return f"<think> {' '.join(narration)}\n{_CLOSING}\n{numbered}\n</think>"
