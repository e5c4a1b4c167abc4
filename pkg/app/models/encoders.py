"""
Motion and text encoders sharing one embedding space.

Motion features (recipe version 1): per-channel mean, per-channel std and
per-channel mean |velocity| -> 3D features, standardized with corpus
statistics, then a two-layer MLP. Text: normalized words hashed into a fixed
number of buckets (bag-of-words counts), then a two-layer MLP. Both outputs
are L2-normalized; an all-zero output stays zero.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from app.core.autodiff import Tape, Var
from app.core.checkpoint import load_checkpoint, save_checkpoint
from app.core.errors import EmptyTextError
from app.core.optim import ParameterSet
from app.models.motion import MotionSequence
from app.utils.text import normalized_words

logger = logging.getLogger(__name__)

FEATURE_RECIPE_VERSION = 1
CHECKPOINT_KIND = "encoders"
_NORM_EPS = 1e-12


def motion_features(m: MotionSequence) -> np.ndarray:
    frames = m.frames
    if m.n_frames < 2:
        logger.warning("Motion has %d frame(s); velocity statistics set to zero", m.n_frames)
        vel = np.zeros(m.n_channels)
    else:
        vel = np.abs(m.velocity()).mean(axis=0)
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0), vel])


def word_bucket(word: str, buckets: int) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


def text_features(text: str, buckets: int) -> np.ndarray:
    words = normalized_words(text)
    if not words:
        raise EmptyTextError(f"Text is empty after normalization: {text!r}")
    bow = np.zeros(buckets)
    for word in words:
        bow[word_bucket(word, buckets)] += 1.0
    return bow


def l2_normalize(tape: Tape, x: Var) -> Var:
    norm2 = tape.sum(tape.square(x), axis=-1, keepdims=True)
    return x * tape.rsqrt(norm2 + _NORM_EPS)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 0, x / np.maximum(norms, _NORM_EPS), 0.0)


def motion_graph(tape: Tape, feats: Var) -> Var:
    p = tape.params
    h = tape.relu(feats @ p["motion.w1"] + p["motion.b1"])
    return h @ p["motion.w2"] + p["motion.b2"]


def text_graph(tape: Tape, bows: Var) -> Var:
    p = tape.params
    h = tape.relu(bows @ p["text.w1"] + p["text.b1"])
    return h @ p["text.w2"] + p["text.b2"]


@dataclass
class EncoderPair:
    params: ParameterSet
    feature_mean: np.ndarray
    feature_std: np.ndarray
    embed_dim: int
    buckets: int
    seed: int = 0

    @classmethod
    def create(cls, n_channels: int, embed_dim: int, hidden: int, buckets: int, seed: int) -> "EncoderPair":
        rng = np.random.default_rng(seed)
        n_feats = 3 * n_channels

        def dense(fan_in: int, fan_out: int) -> np.ndarray:
            return rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)

        params = ParameterSet({
            "motion.w1": dense(n_feats, hidden),
            "motion.b1": np.zeros(hidden),
            "motion.w2": dense(hidden, embed_dim),
            "motion.b2": np.zeros(embed_dim),
            "text.w1": dense(buckets, hidden) * 3.0,
            "text.b1": np.zeros(hidden),
            "text.w2": dense(hidden, embed_dim),
            "text.b2": np.zeros(embed_dim),
        })
        return cls(params, np.zeros(n_feats), np.ones(n_feats), embed_dim, buckets, seed)

    def fit_feature_stats(self, motions: Sequence[MotionSequence]) -> None:
        feats = np.stack([motion_features(m) for m in motions])
        self.feature_mean = feats.mean(axis=0)
        self.feature_std = np.maximum(feats.std(axis=0), 1e-6)

    def motion_inputs(self, motions: Sequence[MotionSequence]) -> np.ndarray:
        feats = np.stack([motion_features(m) for m in motions])
        return (feats - self.feature_mean) / self.feature_std

    def text_inputs(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([text_features(t, self.buckets) for t in texts])

    def embed_motions(self, motions: Sequence[MotionSequence]) -> np.ndarray:
        tape = Tape(self.params, record=False)
        return _normalize_rows(motion_graph(tape, tape.constant(self.motion_inputs(motions))).value)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        tape = Tape(self.params, record=False)
        return _normalize_rows(text_graph(tape, tape.constant(self.text_inputs(texts))).value)

    def embed_motion(self, m: MotionSequence) -> np.ndarray:
        return self.embed_motions([m])[0]

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_texts([text])[0]

    def frozen(self) -> "EncoderPair":
        return EncoderPair(self.params.snapshot(), self.feature_mean.copy(), self.feature_std.copy(),
                           self.embed_dim, self.buckets, self.seed)

    def save(self, path: Union[str, Path]) -> Path:
        tensors = dict(self.params.values)
        tensors["stats.feature_mean"] = self.feature_mean
        tensors["stats.feature_std"] = self.feature_std
        meta = {
            "embed_dim": self.embed_dim,
            "buckets": self.buckets,
            "feature_recipe_version": FEATURE_RECIPE_VERSION,
            "seed": self.seed,
        }
        return save_checkpoint(path, tensors, CHECKPOINT_KIND, meta)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EncoderPair":
        tensors, meta = load_checkpoint(path, expected_kind=CHECKPOINT_KIND)
        params = ParameterSet({k: v for k, v in tensors.items() if not k.startswith("stats.")})
        return cls(params, tensors["stats.feature_mean"].copy(), tensors["stats.feature_std"].copy(),
                   meta["embed_dim"], meta["buckets"], meta.get("seed", 0))


def embed_motion(m: MotionSequence, pair: EncoderPair) -> np.ndarray:
    return pair.embed_motion(m)


def embed_text(text: str, pair: EncoderPair) -> np.ndarray:
    return pair.embed_text(text)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; 0 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        logger.warning("cosine of a zero vector is defined as 0")
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
