from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from app.core.errors import AssignmentMismatchError, QuantizationError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Codebook:
    """N code vectors maintained as EMA means of the latents assigned to them."""

    codes: np.ndarray
    ema_counts: np.ndarray
    ema_sums: np.ndarray
    decay: float = 0.99
    eps_count: float = 1e-5
    usage: np.ndarray = field(default=None)  # type: ignore[assignment]
    initialized: bool = False

    def __post_init__(self) -> None:
        if self.codes.ndim != 2 or self.codes.shape[0] < 2:
            raise ShapeError("codebook", [self.codes.shape])
        if self.usage is None:
            self.usage = np.zeros(self.codes.shape[0], dtype=np.int64)

    @classmethod
    def create(cls, size: int, dim: int, rng: np.random.Generator, decay: float = 0.99,
               eps_count: float = 1e-5, scale: float = 0.1) -> "Codebook":
        codes = scale * rng.standard_normal((size, dim))
        return cls(codes=codes, ema_counts=np.ones(size), ema_sums=codes.copy(), decay=decay, eps_count=eps_count)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def init_from(self, latents: np.ndarray, rng: np.random.Generator) -> None:
        """Seed the codes with encoder outputs; tiles with small jitter when there are fewer latents than codes."""
        latents = np.asarray(latents, dtype=np.float64).reshape(-1, self.dim)
        if latents.shape[0] >= self.size:
            chosen = latents[rng.choice(latents.shape[0], size=self.size, replace=False)]
        else:
            reps = -(-self.size // latents.shape[0])
            tiled = np.tile(latents, (reps, 1))[: self.size]
            chosen = tiled + rng.standard_normal(tiled.shape) * (0.01 / np.sqrt(self.dim))
        self.codes = chosen.copy()
        self.ema_sums = chosen.copy()
        self.ema_counts = np.ones(self.size)
        self.usage[:] = 0
        self.initialized = True

    def nearest(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Index and Euclidean distance of the closest code per row; ties go to the lowest index."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise ShapeError("quantize", [z.shape, self.codes.shape])
        if not np.isfinite(z).all():
            raise QuantizationError("Latents contain NaN or infinite values")
        dist2 = ((z[:, None, :] - self.codes[None, :, :]) ** 2).sum(axis=-1)
        indices = np.argmin(dist2, axis=1)
        return indices, np.sqrt(dist2[np.arange(z.shape[0]), indices])

    def quantize(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        indices, _ = self.nearest(z)
        return indices, self.codes[indices]

    def lookup(self, tokens: Sequence[int]) -> np.ndarray:
        return self.codes[np.asarray(tokens, dtype=np.int64)]

    def perplexity(self, indices: np.ndarray) -> float:
        counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=self.size)
        prob = counts / max(counts.sum(), 1)
        return float(np.exp(-np.sum(prob * np.log(prob + 1e-7))))


def quantize(z: np.ndarray, cb: Codebook) -> tuple[np.ndarray, np.ndarray]:
    return cb.quantize(z)


def ema_update(cb: Codebook, z_batch: np.ndarray, assignments: np.ndarray) -> Codebook:
    z_batch = np.asarray(z_batch, dtype=np.float64).reshape(-1, cb.dim)
    assignments = np.asarray(assignments, dtype=np.int64).reshape(-1)
    if z_batch.shape[0] != assignments.shape[0]:
        raise AssignmentMismatchError(
            f"{assignments.shape[0]} assignments for {z_batch.shape[0]} latents"
        )
    hits = np.bincount(assignments, minlength=cb.size).astype(np.float64)
    batch_sums = np.zeros_like(cb.ema_sums)
    np.add.at(batch_sums, assignments, z_batch)

    cb.ema_counts = cb.decay * cb.ema_counts + (1.0 - cb.decay) * hits
    cb.ema_sums = cb.decay * cb.ema_sums + (1.0 - cb.decay) * batch_sums
    cb.codes = cb.ema_sums / np.maximum(cb.ema_counts, cb.eps_count)[:, None]
    cb.usage += hits.astype(np.int64)
    return cb


def reset_dead_codes(cb: Codebook, z_batch: np.ndarray, usage_threshold: float,
                     rng: Optional[np.random.Generator] = None) -> tuple[Codebook, int]:
    """Re-seed codes whose share of hits in the window fell below ``usage_threshold``.

    Clears the usage window either way.
    """
    z_batch = np.asarray(z_batch, dtype=np.float64).reshape(-1, cb.dim)
    rng = rng or np.random.default_rng(0)
    total = cb.usage.sum()
    fraction = cb.usage / total if total > 0 else np.zeros(cb.size)
    dead = np.flatnonzero(fraction < usage_threshold)
    if dead.size and z_batch.shape[0]:
        picks = rng.choice(z_batch.shape[0], size=dead.size, replace=dead.size > z_batch.shape[0])
        cb.codes[dead] = z_batch[picks]
        cb.ema_sums[dead] = z_batch[picks]
        cb.ema_counts[dead] = 1.0
        logger.debug("Reset %d dead codes", dead.size)
    cb.usage[:] = 0
    return cb, int(dead.size)
