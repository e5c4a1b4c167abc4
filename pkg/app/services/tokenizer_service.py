"""VQ-VAE tokenizer losses and the training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from app.core.autodiff import Tape, Var, forward
from app.core.errors import InsufficientSamplesError, TrainingDivergedError
from app.core.optim import adam_step, cosine_lr
from app.models.codebook import ema_update, reset_dead_codes
from app.models.motion import MotionSample, MotionSequence, pad_to_multiple
from app.models.vqvae import DOWNSAMPLE, MotionTokenizer, decoder_graph, encoder_graph
from app.schemas.training import TokenizerConfig, VqLossBreakdown

logger = logging.getLogger(__name__)


def smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def vq_loss(m: MotionSequence, m_hat: MotionSequence, z: np.ndarray, zq: np.ndarray,
            commit_weight: float = 0.25, velocity_weight: float = 0.5) -> VqLossBreakdown:
    if m.frames.shape != m_hat.frames.shape or np.shape(z) != np.shape(zq):
        raise ValueError("vq_loss inputs must have matching shapes")
    reconstruct = float(smooth_l1(m_hat.frames - m.frames).mean())
    if m.n_frames >= 2:
        reconstruct += velocity_weight * float(
            smooth_l1(m_hat.velocity() - m.velocity()).mean()
        )
    else:
        logger.warning("Motion has %d frame(s); velocity term disabled", m.n_frames)
    diff = np.asarray(z, dtype=np.float64) - np.asarray(zq, dtype=np.float64)
    commit = float((diff ** 2).mean())
    # equal in value to commit; detached on the other side, so it is reported only
    embed = commit
    return VqLossBreakdown(
        reconstruct=reconstruct, commit=commit, embed=embed,
        total=reconstruct + commit_weight * commit + embed,
    )


@dataclass
class TokenizerBatch:
    frames: np.ndarray
    vel_index: np.ndarray
    velocity: np.ndarray

    @classmethod
    def build(cls, motions: Sequence[MotionSequence]) -> "TokenizerBatch":
        """Padded sequences laid end to end; every 4-frame window stays inside one sequence.

        Velocity pairs cover real frames only, never the repeated-frame padding.
        """
        chunks = []
        vel_index = []
        velocity = []
        offset = 0
        for motion in motions:
            padded, _ = pad_to_multiple(motion.frames, DOWNSAMPLE)
            chunks.append(padded)
            if motion.n_frames >= 2:
                vel_index.append(np.arange(offset, offset + motion.n_frames - 1))
                velocity.append(motion.velocity())
            offset += padded.shape[0]
        frames = np.concatenate(chunks, axis=0)
        if not vel_index:
            return cls(frames, np.zeros(0, dtype=np.int64), np.zeros((0, frames.shape[1])))
        return cls(frames, np.concatenate(vel_index), np.concatenate(velocity, axis=0))


def tokenizer_loss_graph(tape: Tape, batch: TokenizerBatch, tokenizer: MotionTokenizer,
                         cfg: TokenizerConfig, stash: dict) -> Var:
    """Composite loss with the straight-through estimator; assignments land in ``stash``.

    ``stash["counts"]`` holds the element count behind each entry of ``stash["parts"]``.
    """
    x = tape.constant(batch.frames)
    z = encoder_graph(tape, x)
    indices, zq = tokenizer.codebook.quantize(z.value)
    stash["indices"], stash["z"] = indices, z.value
    # straight-through: forward value is zq, gradient flows to z unchanged
    zq_st = z + tape.constant(zq - z.value)
    recon = decoder_graph(tape, zq_st)

    rec = tape.mean(tape.smooth_l1(recon - x))
    loss = rec
    idx = batch.vel_index
    vel_value = 0.0
    if idx.size:
        vel_hat = tape.embedding(recon, idx + 1) - tape.embedding(recon, idx)
        vel_loss = tape.mean(tape.smooth_l1(vel_hat - tape.constant(batch.velocity)))
        vel_value = float(vel_loss.value)
        loss = loss + vel_loss * cfg.velocity_weight
    else:
        logger.warning("Batch has no frame pairs; velocity term disabled")
    commit = tape.mean(tape.square(z - tape.constant(zq)))
    stash["parts"] = (float(rec.value), vel_value, float(commit.value))
    stash["counts"] = (batch.frames.size, batch.velocity.size, z.value.size)
    return loss + commit * cfg.commit_weight


@dataclass
class TokenizerTrainingResult:
    tokenizer: MotionTokenizer
    history: List[VqLossBreakdown] = field(default_factory=list)
    resets: int = 0
    perplexity: List[float] = field(default_factory=list)


def _weighted_parts(parts: Sequence[tuple[float, float, float]],
                    counts: Sequence[tuple[int, int, int]]) -> tuple[float, float, float]:
    """Element-weighted means, so the result does not depend on how samples were batched."""
    values = np.asarray(parts, dtype=np.float64)
    weights = np.asarray(counts, dtype=np.float64)
    totals = weights.sum(axis=0)
    means = np.where(totals > 0, (values * weights).sum(axis=0) / np.maximum(totals, 1.0), 0.0)
    return float(means[0]), float(means[1]), float(means[2])


def _breakdown(parts: tuple[float, float, float], cfg: TokenizerConfig) -> VqLossBreakdown:
    rec, vel, commit = parts
    reconstruct = rec + cfg.velocity_weight * vel
    return VqLossBreakdown(
        reconstruct=reconstruct, commit=commit, embed=commit,
        total=reconstruct + cfg.commit_weight * commit + commit,
    )


def train_tokenizer(samples: Sequence[MotionSample], cfg: TokenizerConfig, seed: int = 0,
                    checkpoint_path: Optional[Union[str, Path]] = None) -> TokenizerTrainingResult:
    """Minibatch loop: encode, quantize, decode, loss, backward, Adam; EMA codes and dead-code resets.

    ``lr == 0`` freezes the whole tokenizer, codebook included.
    """
    if not samples:
        raise InsufficientSamplesError("train_tokenizer needs a non-empty corpus")
    rng = np.random.default_rng(seed)
    n_channels = samples[0].motion.n_channels
    tokenizer = MotionTokenizer.create(
        n_channels, cfg.hidden, cfg.codebook_size, cfg.code_dim, rng,
        decay=cfg.decay, eps_count=cfg.eps_count, fps=samples[0].motion.fps,
    )
    threshold = cfg.reset_threshold if cfg.reset_threshold is not None else 1.0 / (4 * cfg.codebook_size)
    frozen = cfg.lr == 0
    steps_per_epoch = -(-len(samples) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    result = TokenizerTrainingResult(tokenizer)
    saved = False
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        epoch_parts = []
        epoch_counts = []
        epoch_indices = []
        for start in range(0, len(samples), cfg.batch_size):
            batch = TokenizerBatch.build([samples[i].motion for i in order[start:start + cfg.batch_size]])
            if not tokenizer.codebook.initialized:
                tape = Tape(tokenizer.params, record=False)
                first = encoder_graph(tape, tape.constant(batch.frames)).value
                tokenizer.codebook.init_from(first, rng)

            stash: dict = {}
            tape, loss = forward(tokenizer_loss_graph, tokenizer.params, batch, tokenizer, cfg, stash)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(
                    f"Tokenizer loss became non-finite at epoch {epoch}, step {step}",
                    str(checkpoint_path) if saved else None,
                )
            grads = tape.backward()
            adam_step(tokenizer.params, grads, cosine_lr(step, total_steps, cfg.lr, min(cfg.lr, cfg.lr_min)))
            if not frozen:
                ema_update(tokenizer.codebook, stash["z"], stash["indices"])
            step += 1
            if cfg.reset_enabled and not frozen and step % cfg.reset_window == 0:
                _, n_reset = reset_dead_codes(tokenizer.codebook, stash["z"], threshold, rng)
                result.resets += n_reset
            epoch_parts.append(stash["parts"])
            epoch_counts.append(stash["counts"])
            epoch_indices.append(stash["indices"])

        result.history.append(_breakdown(_weighted_parts(epoch_parts, epoch_counts), cfg))
        result.perplexity.append(tokenizer.codebook.perplexity(np.concatenate(epoch_indices)))
        logger.info(
            "tokenizer epoch %d/%d: reconstruct=%.5f commit=%.5f perplexity=%.2f",
            epoch + 1, cfg.epochs, result.history[-1].reconstruct, result.history[-1].commit,
            result.perplexity[-1],
        )
        if checkpoint_path is not None:
            tokenizer.save(checkpoint_path)
            saved = True
    return result


def evaluate_reconstruction(tokenizer: MotionTokenizer, samples: Sequence[MotionSample],
                            cfg: TokenizerConfig) -> VqLossBreakdown:
    """Mean loss breakdown over ``samples`` without any update."""
    parts = []
    counts = []
    for start in range(0, len(samples), cfg.batch_size):
        batch = TokenizerBatch.build([s.motion for s in samples[start:start + cfg.batch_size]])
        stash: dict = {}
        forward(tokenizer_loss_graph, tokenizer.params, batch, tokenizer, cfg, stash, record=False)
        parts.append(stash["parts"])
        counts.append(stash["counts"])
    return _breakdown(_weighted_parts(parts, counts), cfg)


def codebook_usage(tokenizer: MotionTokenizer, samples: Sequence[MotionSample]) -> float:
    """Fraction of codes hit at least once when tokenizing ``samples``."""
    hit = np.zeros(tokenizer.codebook_size, dtype=bool)
    for sample in samples:
        hit[tokenizer.tokenize(sample.motion)] = True
    return float(hit.mean())
