"""Contrastive training for the motion/text encoder pair."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from app.core.autodiff import Tape, Var, forward
from app.core.errors import InsufficientSamplesError, TrainingDivergedError
from app.core.optim import adam_step, cosine_lr
from app.models.encoders import EncoderPair, l2_normalize, motion_graph, text_graph
from app.models.motion import MotionSample
from app.schemas.training import EncoderConfig
from app.services.metrics import r_precision

logger = logging.getLogger(__name__)


def info_nce_graph(tape: Tape, motion_inputs: np.ndarray, text_inputs: np.ndarray, temperature: float) -> Var:
    """Symmetric InfoNCE over in-batch pairs on L2-normalized embeddings."""
    zm = l2_normalize(tape, motion_graph(tape, tape.constant(motion_inputs)))
    zt = l2_normalize(tape, text_graph(tape, tape.constant(text_inputs)))
    logits = (zm @ tape.transpose(zt, (1, 0))) * (1.0 / temperature)
    targets = np.arange(motion_inputs.shape[0])
    motion_to_text = tape.cross_entropy(logits, targets)
    text_to_motion = tape.cross_entropy(tape.transpose(logits, (1, 0)), targets)
    return (motion_to_text + text_to_motion) * 0.5


def retrieval_accuracy(pair: EncoderPair, samples: Sequence[MotionSample], pool: int = 32, seed: int = 0) -> float:
    """Top-1 retrieval of each motion's description among ``pool`` candidates (capped at the set size)."""
    if len(samples) < 2:
        raise InsufficientSamplesError("retrieval accuracy needs at least 2 samples")
    text_emb = pair.embed_texts([s.text for s in samples])
    motion_emb = pair.embed_motions([s.motion for s in samples])
    return r_precision(text_emb, motion_emb, k=1, pool=min(pool, len(samples)), seed=seed)


@dataclass
class EncoderTrainingResult:
    pair: EncoderPair
    accuracy_history: List[float] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list)


def train_contrastive(pair: EncoderPair, train: Sequence[MotionSample], val: Sequence[MotionSample],
                      cfg: EncoderConfig, seed: int = 0) -> EncoderTrainingResult:
    if cfg.batch_size < 2:
        raise InsufficientSamplesError("contrastive training needs batch_size >= 2")
    if len({s.family for s in train}) < 2:
        raise InsufficientSamplesError("contrastive training needs at least 2 distinct families")
    rng = np.random.default_rng(seed)
    pair.fit_feature_stats([s.motion for s in train])
    motion_inputs = pair.motion_inputs([s.motion for s in train])
    text_inputs = pair.text_inputs([s.text for s in train])
    eval_set = val if len(val) >= 2 else train

    steps_per_epoch = max(1, len(train) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    result = EncoderTrainingResult(pair)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if idx.size < 2:
                continue
            tape, loss = forward(info_nce_graph, pair.params, motion_inputs[idx], text_inputs[idx], cfg.temperature)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(f"Contrastive loss became non-finite at epoch {epoch}")
            adam_step(pair.params, tape.backward(), cosine_lr(step, total_steps, cfg.lr, 0.0))
            losses.append(float(loss.value))
            step += 1
        acc = retrieval_accuracy(pair, eval_set, cfg.retrieval_pool, seed=seed + epoch)
        result.accuracy_history.append(acc)
        result.loss_history.append(float(np.mean(losses)) if losses else float("nan"))
        logger.info("encoders epoch %d/%d: loss=%.4f val top-1=%.3f",
                    epoch + 1, cfg.epochs, result.loss_history[-1], acc)
    return result
