"""
Text-to-motion metric suite: R-Precision, FID, Diversity, MM-Dist, MModality.

All functions are pure in (features, seed).
"""
from __future__ import annotations

import logging
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from app.core.errors import InsufficientSamplesError
from app.models.encoders import EncoderPair
from app.models.motion import MotionSequence

logger = logging.getLogger(__name__)

EIGEN_CLAMP = 1e-10

# text, n, seed -> n generated motions (None where the output did not parse)
Generator = Callable[[str, int, int], List[Optional[MotionSequence]]]


def _check_pairs(text_emb: np.ndarray, motion_emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    text_emb = np.asarray(text_emb, dtype=np.float64)
    motion_emb = np.asarray(motion_emb, dtype=np.float64)
    if text_emb.shape != motion_emb.shape or text_emb.ndim != 2:
        raise ValueError(f"text/motion embeddings must share an M x d shape, got {text_emb.shape} and {motion_emb.shape}")
    return text_emb, motion_emb


def retrieval_ranks(text_emb: np.ndarray, motion_emb: np.ndarray, pool: int = 32, seed: int = 0) -> np.ndarray:
    """Rank of each motion's true description among ``pool - 1`` seeded negatives (1 = best)."""
    text_emb, motion_emb = _check_pairs(text_emb, motion_emb)
    m = text_emb.shape[0]
    if m < pool:
        raise InsufficientSamplesError(f"R-Precision needs at least {pool} pairs, got {m}")
    rng = np.random.default_rng(seed)
    ranks = np.empty(m, dtype=np.int64)
    for i in range(m):
        negatives = rng.choice(m - 1, size=pool - 1, replace=False)
        negatives[negatives >= i] += 1
        true_dist = np.linalg.norm(motion_emb[i] - text_emb[i])
        neg_dist = np.linalg.norm(text_emb[negatives] - motion_emb[i], axis=1)
        ranks[i] = 1 + int(np.count_nonzero(neg_dist < true_dist))
    return ranks


def r_precision(text_emb: np.ndarray, motion_emb: np.ndarray, k: int = 1, pool: int = 32, seed: int = 0) -> float:
    return float(np.mean(retrieval_ranks(text_emb, motion_emb, pool, seed) <= k))


def r_precision_curve(text_emb: np.ndarray, motion_emb: np.ndarray, ks: Sequence[int] = (1, 2, 3),
                      pool: int = 32, seed: int = 0) -> Dict[int, float]:
    """Top-k accuracies for several k from one draw of negatives."""
    ranks = retrieval_ranks(text_emb, motion_emb, pool, seed)
    return {k: float(np.mean(ranks <= k)) for k in ks}


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = linalg.eigh((matrix + matrix.T) / 2.0)
    eigvals = np.where(eigvals < EIGEN_CLAMP, 0.0, eigvals)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def fid(real: np.ndarray, gen: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if real.ndim == 1:
        real = real[:, None]
    if gen.ndim == 1:
        gen = gen[:, None]
    d = real.shape[1]
    if gen.shape[1] != d:
        raise ValueError(f"feature dims differ: {d} vs {gen.shape[1]}")
    if real.shape[0] < d + 1 or gen.shape[0] < d + 1:
        raise InsufficientSamplesError(
            f"FID needs at least {d + 1} rows per set, got {real.shape[0]} and {gen.shape[0]}"
        )
    mu_r, mu_g = real.mean(axis=0), gen.mean(axis=0)
    sigma_r = np.atleast_2d(np.cov(real, rowvar=False))
    sigma_g = np.atleast_2d(np.cov(gen, rowvar=False))

    root_r = _psd_sqrt(sigma_r)
    inner = root_r @ sigma_g @ root_r
    eigvals = linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_covmean = float(np.sqrt(np.where(eigvals < EIGEN_CLAMP, 0.0, eigvals)).sum())

    diff = mu_r - mu_g
    value = float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_g) - 2.0 * tr_covmean)
    return max(value, 0.0)


def diversity(feats: np.ndarray, s_dis: int = 300, seed: int = 0, exhaustive: bool = False) -> float:
    feats = np.asarray(feats, dtype=np.float64)
    m = feats.shape[0]
    if m < 2:
        raise InsufficientSamplesError(f"diversity needs at least 2 rows, got {m}")
    if exhaustive:
        dists = np.linalg.norm(feats[:, None, :] - feats[None, :, :], axis=-1)
        return float(dists.sum() / (m * (m - 1)))
    if s_dis < 1:
        raise ValueError("s_dis must be >= 1")
    rng = np.random.default_rng(seed)
    first = rng.integers(m, size=s_dis)
    second = rng.integers(m - 1, size=s_dis)
    second[second >= first] += 1
    return float(np.linalg.norm(feats[first] - feats[second], axis=1).mean())


def mm_dist(text_emb: np.ndarray, motion_emb: np.ndarray, mode: str = "euclidean") -> float:
    text_emb, motion_emb = _check_pairs(text_emb, motion_emb)
    if text_emb.shape[0] == 0:
        raise InsufficientSamplesError("mm_dist needs at least one pair")
    if mode == "euclidean":
        return float(np.linalg.norm(text_emb - motion_emb, axis=1).mean())
    if mode == "cosine":
        nt = np.linalg.norm(text_emb, axis=1)
        nm = np.linalg.norm(motion_emb, axis=1)
        ok = (nt > 0) & (nm > 0)
        if not ok.all():
            logger.warning("%d zero-vector pair(s) in MM-Dist; cosine taken as 0", int((~ok).sum()))
        cos = np.zeros(text_emb.shape[0])
        cos[ok] = (text_emb[ok] * motion_emb[ok]).sum(axis=1) / (nt[ok] * nm[ok])
        return float((1.0 - np.clip(cos, -1.0, 1.0)).mean())
    raise ValueError(f"Unknown MM-Dist mode '{mode}'")


def mean_pair_distance(embeddings: np.ndarray, pairs_per_text: int, rng: np.random.Generator) -> float:
    """Mean distance over seeded index pairs, or over every unordered pair when the budget covers them."""
    reps = embeddings.shape[0]
    all_pairs = list(combinations(range(reps), 2))
    if pairs_per_text >= len(all_pairs):
        chosen = all_pairs
    else:
        first = rng.integers(reps, size=pairs_per_text)
        second = rng.integers(reps - 1, size=pairs_per_text)
        second[second >= first] += 1
        chosen = list(zip(first.tolist(), second.tolist()))
    return float(np.mean([np.linalg.norm(embeddings[i] - embeddings[j]) for i, j in chosen]))


def mmodality(generator: Generator, texts: Sequence[str], reps: int, pairs_per_text: int,
              pair: EncoderPair, seed: int = 0) -> float:
    if reps < 2:
        raise ValueError("mmodality needs reps >= 2")
    rng = np.random.default_rng(seed)
    per_text = []
    for index, text in enumerate(texts):
        motions = generator(text, reps, int(rng.integers(2**62)))
        failed = [m is None for m in motions]
        if any(failed):
            logger.warning("MModality: %d of %d generations for %r did not parse; using zero embeddings",
                           sum(failed), reps, text)
        embeddings = np.zeros((reps, pair.embed_dim))
        good = [m for m in motions if m is not None]
        if good:
            embeddings[[i for i, bad in enumerate(failed) if not bad]] = pair.embed_motions(good)
        per_text.append(mean_pair_distance(embeddings, pairs_per_text, rng))
    return float(np.mean(per_text))


def confidence_interval(values: Sequence[float]) -> tuple[float, float]:
    """Mean and 95% half-width 1.96 * std / sqrt(n) with the population std."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InsufficientSamplesError("no values to summarize")
    return float(arr.mean()), float(1.96 * arr.std() / np.sqrt(arr.size))
