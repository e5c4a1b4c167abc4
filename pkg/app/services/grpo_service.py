"""
Group relative policy optimization over the token policy.

Per step: sample a group of outputs per prompt from the old policy, score
each with the gated composite reward, standardize rewards within the group,
and minimize the negated clipped objective with a per-token KL penalty to
the frozen reference policy.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.autodiff import Tape, Var, forward
from app.core.errors import GroupSizeError, LengthMismatchError, NonFiniteRatioError, TrainingDivergedError
from app.core.optim import adam_step, cosine_lr
from app.models.encoders import EncoderPair, cosine
from app.models.motion import MotionSequence
from app.models.policy import PolicyModel
from app.models.vocabulary import Vocabulary
from app.models.vqvae import MotionTokenizer
from app.schemas.grpo import GRPOConfig, RewardBreakdown, RewardWeights, StepLog
from app.schemas.training import SamplingConfig
from app.services.policy_service import (
    GenerationSample, batch_log_prob_graph, encode_prompt, sample, sample_group, sequence_log_prob,
)
from app.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

ABLATION_WEIGHTS: Dict[str, RewardWeights] = {
    "full": RewardWeights(format=1.0, motion=1.0, semantic=1.0),
    "format_only": RewardWeights(format=1.0, motion=0.0, semantic=0.0),
    "no_motion": RewardWeights(format=1.0, motion=0.0, semantic=1.0),
    "no_semantic": RewardWeights(format=1.0, motion=1.0, semantic=0.0),
}

# (prompt text, ground-truth motion)
Prompt = Tuple[str, MotionSequence]


# -- rewards ---------------------------------------------------------------
def format_reward(s: GenerationSample) -> int:
    return 1 if s.parse_ok else 0


def _decode(tokens: Optional[Sequence[int]], tokenizer: MotionTokenizer) -> Optional[MotionSequence]:
    if not tokens:
        return None
    return tokenizer.decode(tokens)


def motion_reward(gen_tokens: Optional[Sequence[int]], gt_motion: MotionSequence,
                  tokenizer: MotionTokenizer, pair: EncoderPair) -> float:
    generated = _decode(gen_tokens, tokenizer)
    if generated is None:
        return 0.0
    return cosine(pair.embed_motion(generated), pair.embed_motion(gt_motion))


def semantic_reward(gen_tokens: Optional[Sequence[int]], text: str,
                    tokenizer: MotionTokenizer, pair: EncoderPair) -> float:
    generated = _decode(gen_tokens, tokenizer)
    if generated is None:
        return 0.0
    return cosine(pair.embed_motion(generated), pair.embed_text(text))


def combine_rewards(r_format: int, r_motion: float, r_semantic: float, weights: RewardWeights) -> RewardBreakdown:
    """Weighted sum; a parse failure zeroes the motion and semantic terms."""
    if not r_format:
        r_motion = r_semantic = 0.0
    scalar = weights.format * r_format + weights.motion * r_motion + weights.semantic * r_semantic
    return RewardBreakdown(r_format=r_format, r_motion=r_motion, r_semantic=r_semantic, scalar=scalar)


def composite_reward(s: GenerationSample, gt_motion: MotionSequence, text: str, weights: RewardWeights,
                     tokenizer: MotionTokenizer, pair: EncoderPair) -> RewardBreakdown:
    r_format = format_reward(s)
    if not r_format:
        return combine_rewards(0, 0.0, 0.0, weights)
    tokens = s.parsed.motion_tokens
    # skip decoding for terms that carry no weight
    r_motion = motion_reward(tokens, gt_motion, tokenizer, pair) if weights.motion else 0.0
    r_semantic = semantic_reward(tokens, text, tokenizer, pair) if weights.semantic else 0.0
    return combine_rewards(r_format, r_motion, r_semantic, weights)


# -- objective -------------------------------------------------------------
def compute_advantages(rewards: Sequence[float], eps_std: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupSizeError(f"advantages need a group of at least 2, got {r.size}")
    std = r.std()
    if std <= eps_std:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def token_kl(theta_logprobs: Sequence[float], ref_logprobs: Sequence[float]) -> float:
    """Mean of exp(ref - theta) - (ref - theta) - 1 over realized tokens."""
    theta = np.asarray(theta_logprobs, dtype=np.float64)
    ref = np.asarray(ref_logprobs, dtype=np.float64)
    if theta.shape != ref.shape:
        raise LengthMismatchError(f"log-prob lengths differ: {theta.shape} vs {ref.shape}")
    if theta.size == 0:
        return 0.0
    x = ref - theta
    return float(np.mean(np.expm1(x) - x))


def grpo_loss_graph(tape: Tape, new_lp: Var, old_lp: np.ndarray, ref_lp: np.ndarray, advantages: np.ndarray,
                    mask: np.ndarray, epsilon: float, beta: float) -> Var:
    """Negated clipped objective with per-token ratios sharing each sample's advantage."""
    mask = np.asarray(mask, dtype=np.float64)
    # padded positions become ratio 1 and zero KL
    new_lp = new_lp * tape.constant(mask)
    ratio = tape.exp(new_lp - tape.constant(old_lp * mask))
    if not np.isfinite(ratio.value).all():
        raise NonFiniteRatioError("policy ratio overflowed")
    adv = tape.constant(np.asarray(advantages, dtype=np.float64)[:, None])
    term = tape.minimum(ratio * adv, tape.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv)
    diff = tape.constant(ref_lp * mask) - new_lp
    kl = tape.exp(diff) - diff - 1.0
    per_token = (term - kl * beta) * tape.constant(mask)
    lengths = np.maximum(mask.sum(axis=1), 1.0)
    per_sample = tape.sum(per_token, axis=1) * tape.constant(1.0 / lengths)
    return -tape.mean(per_sample)


def _pad(rows: Sequence[Sequence[float]], width: int) -> np.ndarray:
    out = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return out


def grpo_loss(old_lp: Sequence[Sequence[float]], new_lp: Sequence[Sequence[float]], advantages: Sequence[float],
              ref_lp: Optional[Sequence[Sequence[float]]] = None, epsilon: float = 0.2, beta: float = 0.0) -> float:
    """Loss value for per-sample per-token log-probabilities; ``ref_lp`` defaults to ``new_lp`` (zero KL)."""
    if len(old_lp) != len(new_lp) or len(new_lp) != len(advantages):
        raise LengthMismatchError("old/new log-probs and advantages must cover the same samples")
    for o, n in zip(old_lp, new_lp):
        if len(o) != len(n):
            raise LengthMismatchError(f"old/new log-prob lengths differ: {len(o)} vs {len(n)}")
    width = max((len(n) for n in new_lp), default=0)
    mask = _pad([[1.0] * len(n) for n in new_lp], width)
    new = _pad(new_lp, width)
    ref = _pad(ref_lp if ref_lp is not None else new_lp, width)
    tape = Tape(record=False)
    return float(grpo_loss_graph(tape, tape.constant(new), _pad(old_lp, width), ref,
                                 np.asarray(advantages), mask, epsilon, beta).value)


# -- training loop ---------------------------------------------------------
@dataclass
class Rollout:
    prompt_ids: List[int]
    samples: List[GenerationSample]
    rewards: List[RewardBreakdown]
    advantages: np.ndarray
    ref_lp: List[np.ndarray]


@dataclass
class GRPOResult:
    policy: PolicyModel
    logs: List[StepLog] = field(default_factory=list)


def collect_rollout(old: PolicyModel, ref: PolicyModel, vocab: Vocabulary, prompt: Prompt, cfg: GRPOConfig,
                    weights: RewardWeights, tokenizer: MotionTokenizer, pair: EncoderPair, seed: int,
                    use_cot: bool = True) -> Rollout:
    text, gt_motion = prompt
    prompt_ids = encode_prompt(text, vocab)
    group = sample_group(old, prompt_ids, cfg.group_size, cfg.sampling, seed, vocab, use_cot)
    rewards = [composite_reward(s, gt_motion, text, weights, tokenizer, pair) for s in group]
    advantages = compute_advantages([r.scalar for r in rewards], cfg.eps_std)
    ref_lp = [sequence_log_prob(ref, prompt_ids, s.output_ids) for s in group]
    return Rollout(prompt_ids, group, rewards, advantages, ref_lp)


def rollout_loss_graph(tape: Tape, policy: PolicyModel, rollouts: Sequence[Rollout], cfg: GRPOConfig) -> Var:
    total: Optional[Var] = None
    for r in rollouts:
        outputs = [s.output_ids for s in r.samples]
        new_lp, mask = batch_log_prob_graph(tape, policy, r.prompt_ids, outputs)
        width = mask.shape[1]
        loss = grpo_loss_graph(tape, new_lp, _pad([s.log_probs for s in r.samples], width), _pad(r.ref_lp, width),
                               r.advantages, mask, cfg.epsilon, cfg.beta)
        total = loss if total is None else total + loss
    assert total is not None
    return total * (1.0 / len(rollouts))


def write_step_logs(logs: Sequence[StepLog], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(StepLog.model_fields))
        writer.writeheader()
        for log in logs:
            writer.writerow(log.model_dump())
    return path


def grpo_train(policy: PolicyModel, vocab: Vocabulary, tokenizer: MotionTokenizer, pair: EncoderPair,
               prompts: Sequence[Prompt], cfg: GRPOConfig, seed: int = 0, use_cot: bool = True,
               weights: Optional[RewardWeights] = None, total_steps: Optional[int] = None,
               log_path: Optional[Union[str, Path]] = None,
               checkpoint_path: Optional[Union[str, Path]] = None) -> GRPOResult:
    if not prompts:
        raise ValueError("GRPO needs at least one prompt")
    weights = weights or cfg.weights
    total_steps = total_steps or cfg.total_steps
    rng = np.random.default_rng(derive_seed(seed, "grpo-prompts"))
    ref = policy.frozen()
    old = ref
    frozen_pair = pair.frozen()
    result = GRPOResult(policy)
    saved: Optional[str] = None
    for step in range(total_steps):
        if step % cfg.old_refresh_interval == 0:
            old = policy.frozen()
        lr = cosine_lr(step, total_steps, cfg.lr, cfg.lr_min)
        chosen = rng.choice(len(prompts), size=min(cfg.prompts_per_step, len(prompts)), replace=False)
        rollouts = [
            collect_rollout(old, ref, vocab, prompts[int(i)], cfg, weights, tokenizer, frozen_pair,
                            derive_seed(seed, "rollout", step, j), use_cot)
            for j, i in enumerate(chosen)
        ]
        for _ in range(cfg.updates_per_rollout):
            tape, loss = forward(lambda t: rollout_loss_graph(t, policy, rollouts, cfg), policy.params)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(f"GRPO loss became non-finite at step {step}", saved)
            adam_step(policy.params, tape.backward(), lr)

        rewards = [rw for r in rollouts for rw in r.rewards]
        kls = [token_kl(s.log_probs, ref_lp) for r in rollouts for s, ref_lp in zip(r.samples, r.ref_lp)]
        log = StepLog(
            step=step,
            mean_reward=float(np.mean([rw.scalar for rw in rewards])),
            format_rate=float(np.mean([rw.r_format for rw in rewards])),
            mean_r_motion=float(np.mean([rw.r_motion for rw in rewards])),
            mean_r_semantic=float(np.mean([rw.r_semantic for rw in rewards])),
            kl=float(np.mean(kls)),
            lr=lr,
        )
        result.logs.append(log)
        if step % cfg.log_every == 0 or step == total_steps - 1:
            logger.info("grpo step %d/%d: reward=%.4f format=%.3f kl=%.5f lr=%.2e",
                        step + 1, total_steps, log.mean_reward, log.format_rate, log.kl, lr)
            if checkpoint_path is not None:
                saved = str(policy.save(checkpoint_path))
        if log_path is not None:
            write_step_logs(result.logs, log_path)
    return result


def mean_semantic_reward(policy: PolicyModel, vocab: Vocabulary, tokenizer: MotionTokenizer, pair: EncoderPair,
                         prompts: Sequence[Prompt], use_cot: bool = True, max_new_tokens: int = 128) -> float:
    """Semantic reward of greedy generations, unparsable outputs scoring 0."""
    greedy = SamplingConfig(greedy=True, max_new_tokens=max_new_tokens)
    scores = []
    for text, _ in prompts:
        s = sample(policy, encode_prompt(text, vocab), greedy, 0, vocab, use_cot)
        scores.append(semantic_reward(s.parsed.motion_tokens if s.parse_ok else None, text, tokenizer, pair))
    return float(np.mean(scores))


def run_reward_ablation(sft_policy: PolicyModel, vocab: Vocabulary, tokenizer: MotionTokenizer,
                        pair: EncoderPair, train_prompts: Sequence[Prompt], eval_prompts: Sequence[Prompt],
                        cfg: GRPOConfig, seed: int = 0, use_cot: bool = True,
                        out_path: Optional[Union[str, Path]] = None) -> Dict[str, float]:
    """Mean greedy semantic reward per named reward configuration, averaged over seeds."""
    unknown = [name for name in cfg.ablation_configs if name not in ABLATION_WEIGHTS]
    if unknown:
        raise ValueError(f"Unknown ablation configuration(s): {', '.join(unknown)}")
    rows = []
    summary: Dict[str, float] = {}
    for name in cfg.ablation_configs:
        scores = []
        for run in range(cfg.ablation_seeds):
            run_seed = derive_seed(seed, "ablation", run)
            policy = sft_policy.clone()
            grpo_train(policy, vocab, tokenizer, pair, train_prompts, cfg, run_seed, use_cot,
                       weights=ABLATION_WEIGHTS[name], total_steps=cfg.ablation_steps)
            score = mean_semantic_reward(policy, vocab, tokenizer, pair, eval_prompts, use_cot,
                                         cfg.sampling.max_new_tokens)
            scores.append(score)
            rows.append({"config": name, "seed": run, "mean_r_semantic": score})
        summary[name] = float(np.mean(scores))
        logger.info("ablation %s: mean semantic reward %.4f", name, summary[name])
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["config", "seed", "mean_r_semantic"])
            writer.writeheader()
            writer.writerows(rows)
    return summary
