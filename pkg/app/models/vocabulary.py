"""
Joint word / tag / motion-token vocabulary.

Layout: special tokens first, then the sorted corpus words, then the
motion tokens ``M_0 .. M_{N-1}`` as one contiguous id range.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import orjson

from app.core.checkpoint import atomic_write_bytes
from app.core.errors import CheckpointFormatError
from app.utils.text import split_words

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
MOTION_OPEN, MOTION_CLOSE = "<Motion>", "</Motion>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK, THINK_OPEN, THINK_CLOSE, MOTION_OPEN, MOTION_CLOSE)

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
THINK_OPEN_ID, THINK_CLOSE_ID, MOTION_OPEN_ID, MOTION_CLOSE_ID = 4, 5, 6, 7


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    codebook_size: int

    def __post_init__(self) -> None:
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if len(set(self.words)) != len(self.words) or set(self.words) & set(SPECIAL_TOKENS):
            raise ValueError("vocabulary words must be unique and distinct from special tokens")
        object.__setattr__(self, "_word_ids", {w: len(SPECIAL_TOKENS) + i for i, w in enumerate(self.words)})

    @classmethod
    def build(cls, texts: Iterable[str], codebook_size: int) -> "Vocabulary":
        words = set()
        for text in texts:
            words.update(split_words(text))
        return cls(tuple(sorted(words - set(SPECIAL_TOKENS))), codebook_size)

    @property
    def motion_offset(self) -> int:
        return len(SPECIAL_TOKENS) + len(self.words)

    @property
    def size(self) -> int:
        return self.motion_offset + self.codebook_size

    def __len__(self) -> int:
        return self.size

    def word_id(self, word: str) -> int:
        return self._word_ids.get(word, UNK_ID)  # type: ignore[attr-defined]

    def encode_text(self, text: str) -> List[int]:
        return [self.word_id(w) for w in split_words(text)]

    def motion_id(self, index: int) -> int:
        if not 0 <= index < self.codebook_size:
            raise ValueError(f"motion token {index} outside [0, {self.codebook_size})")
        return self.motion_offset + int(index)

    def is_motion(self, token_id: int) -> bool:
        return self.motion_offset <= token_id < self.size

    def is_word(self, token_id: int) -> bool:
        return token_id == UNK_ID or len(SPECIAL_TOKENS) <= token_id < self.motion_offset

    def motion_index(self, token_id: int) -> int:
        if not self.is_motion(token_id):
            raise ValueError(f"token id {token_id} is not a motion token")
        return token_id - self.motion_offset

    def token(self, token_id: int) -> str:
        if 0 <= token_id < len(SPECIAL_TOKENS):
            return SPECIAL_TOKENS[token_id]
        if token_id < self.motion_offset:
            return self.words[token_id - len(SPECIAL_TOKENS)]
        if token_id < self.size:
            return f"M_{token_id - self.motion_offset}"
        raise ValueError(f"token id {token_id} outside vocabulary of size {self.size}")

    def decode_words(self, ids: Sequence[int]) -> str:
        return " ".join(self.token(i) for i in ids)

    # -- persistence -------------------------------------------------------
    def to_json(self) -> bytes:
        mapping = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
        mapping.update(self._word_ids)  # type: ignore[attr-defined]
        return orjson.dumps({"tokens": mapping, "codebook_size": self.codebook_size}, option=orjson.OPT_INDENT_2)

    def save(self, path: Union[str, Path]) -> Path:
        atomic_write_bytes(path, self.to_json())
        return Path(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        try:
            data = orjson.loads(Path(path).read_bytes())
            mapping = data["tokens"]
            codebook_size = int(data["codebook_size"])
        except (OSError, orjson.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"Cannot read vocabulary {path}: {exc}") from exc
        for i, tok in enumerate(SPECIAL_TOKENS):
            if mapping.get(tok) != i:
                raise CheckpointFormatError(f"Vocabulary {path} has special token {tok!r} at the wrong id")
        words = [w for w, _ in sorted(mapping.items(), key=lambda kv: kv[1]) if w not in SPECIAL_TOKENS]
        return cls(tuple(words), codebook_size)
