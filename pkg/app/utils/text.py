import re
from typing import List

_WORD_RE = re.compile(r"\w+|[^\w\s]")
_PUNCT_RE = re.compile(r"[^\w\s]")


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


def normalized_words(text: str) -> List[str]:
    return normalize_text(text).split()


def split_words(text: str) -> List[str]:
    """Lowercased word tokens with punctuation kept as separate tokens."""
    return _WORD_RE.findall(text.lower())


def jaccard(a: List[str], b: List[str]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)
