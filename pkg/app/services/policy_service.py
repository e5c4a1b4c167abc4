"""
Policy serialization, parsing, supervised cold start and sampling.

Response grammar with reasoning:
    <think> words+ </think> <Motion> M_i+ </Motion> [<eos>]
and without reasoning:
    <Motion> M_i+ </Motion> [<eos>]
The reasoning span carries the numbered step list of the trace.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from app.core.autodiff import Tape, Var, forward
from app.core.errors import ContextOverflowError, GroupSizeError, TrainingDivergedError
from app.core.optim import adam_step, cosine_lr
from app.models.policy import PolicyModel
from app.models.vocabulary import (
    BOS_ID, EOS_ID, MOTION_CLOSE_ID, MOTION_OPEN_ID, PAD_ID, THINK_CLOSE_ID, THINK_OPEN_ID, Vocabulary,
)
from app.schemas.cot import Triplet
from app.schemas.training import SamplingConfig, SftConfig
from app.utils.seeding import derive_seed

logger = logging.getLogger(__name__)


# -- serialization ---------------------------------------------------------
def steps_text(steps: Sequence[str]) -> str:
    return "\n".join(f"{i}. {step}." for i, step in enumerate(steps, start=1))


def encode_prompt(text: str, vocab: Vocabulary) -> List[int]:
    return [BOS_ID] + vocab.encode_text(text)


def encode_response(steps: Sequence[str], motion_tokens: Sequence[int], vocab: Vocabulary,
                    use_cot: bool = True) -> List[int]:
    ids: List[int] = []
    if use_cot:
        think = vocab.encode_text(steps_text(steps))
        if not think:
            raise ValueError("reasoning span must not be empty")
        ids += [THINK_OPEN_ID] + think + [THINK_CLOSE_ID]
    ids += [MOTION_OPEN_ID] + [vocab.motion_id(t) for t in motion_tokens] + [MOTION_CLOSE_ID, EOS_ID]
    return ids


@dataclass
class SerializedExample:
    ids: List[int]
    prompt_length: int


def serialize_example(t: Triplet, vocab: Vocabulary, use_cot: bool = True) -> SerializedExample:
    prompt = encode_prompt(t.text, vocab)
    return SerializedExample(prompt + encode_response(t.cot_steps, t.motion_tokens, vocab, use_cot), len(prompt))


def serialize_triplet(t: Triplet, vocab: Vocabulary, use_cot: bool = True) -> List[int]:
    return serialize_example(t, vocab, use_cot).ids


# -- parsing ---------------------------------------------------------------
@dataclass
class ParsedOutput:
    parse_ok: bool
    think: Optional[str] = None
    motion_tokens: Optional[List[int]] = None


def parse_output(ids: Sequence[int], vocab: Vocabulary, use_cot: bool = True) -> ParsedOutput:
    """Strict grammar check of a response span; a failure is a value, never an error."""
    ids = [int(i) for i in ids]
    if ids and ids[-1] == EOS_ID:
        ids = ids[:-1]
    think: Optional[str] = None
    pos = 0
    if use_cot:
        if not ids or ids[0] != THINK_OPEN_ID or THINK_CLOSE_ID not in ids:
            return ParsedOutput(False)
        close = ids.index(THINK_CLOSE_ID)
        span = ids[1:close]
        if not span or not all(vocab.is_word(i) for i in span):
            return ParsedOutput(False)
        think = vocab.decode_words(span)
        pos = close + 1
    rest = ids[pos:]
    if len(rest) < 3 or rest[0] != MOTION_OPEN_ID or rest[-1] != MOTION_CLOSE_ID:
        return ParsedOutput(False)
    body = rest[1:-1]
    if not all(vocab.is_motion(i) for i in body):
        return ParsedOutput(False)
    return ParsedOutput(True, think, [vocab.motion_index(i) for i in body])


# -- supervised cold start -------------------------------------------------
def _truncate(example: SerializedExample, context_length: int) -> SerializedExample:
    if len(example.ids) <= context_length:
        return example
    logger.warning("Truncating a %d-token sequence to the %d-token context", len(example.ids), context_length)
    return SerializedExample(example.ids[:context_length], min(example.prompt_length, context_length))


def sft_batch(examples: Sequence[SerializedExample], context_length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs, next-token targets and a response-only loss mask, right-padded."""
    examples = [_truncate(e, context_length) for e in examples]
    width = max(len(e.ids) for e in examples) - 1
    inputs = np.full((len(examples), width), PAD_ID, dtype=np.int64)
    targets = np.full((len(examples), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(examples), width))
    for row, e in enumerate(examples):
        n = len(e.ids) - 1
        inputs[row, :n] = e.ids[:-1]
        targets[row, :n] = e.ids[1:]
        # target position j predicts token j+1; responses start at prompt_length
        mask[row, max(e.prompt_length - 1, 0):n] = 1.0
    return inputs, targets, mask


def sft_loss_graph(tape: Tape, model: PolicyModel, inputs: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> Var:
    return tape.cross_entropy(model.graph(tape, inputs), targets, mask)


def sft_step(model: PolicyModel, examples: Sequence[SerializedExample], lr: float,
             cfg: Optional[SftConfig] = None) -> float:
    """One teacher-forced update; returns the mean response-token cross-entropy before the update."""
    cfg = cfg or SftConfig()
    inputs, targets, mask = sft_batch(examples, model.context_length)
    tape, loss = forward(lambda t: sft_loss_graph(t, model, inputs, targets, mask), model.params)
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDivergedError("SFT loss became non-finite")
    adam_step(model.params, tape.backward(), lr, betas=cfg.betas, eps=cfg.eps)
    return value


def teacher_forced_accuracy(model: PolicyModel, examples: Sequence[SerializedExample]) -> float:
    inputs, targets, mask = sft_batch(examples, model.context_length)
    predicted = model.logits(inputs).argmax(axis=-1)
    return float(((predicted == targets) * mask).sum() / max(mask.sum(), 1.0))


@dataclass
class SftTrainingResult:
    model: PolicyModel
    loss_history: List[float] = field(default_factory=list)
    accuracy: float = 0.0


def train_sft(model: PolicyModel, examples: Sequence[SerializedExample], cfg: SftConfig,
              seed: int = 0) -> SftTrainingResult:
    if not examples:
        raise ValueError("SFT needs at least one example")
    rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, -(-len(examples) // cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    result = SftTrainingResult(model)
    logger.info("sft: %d examples, %d parameters, %d steps", len(examples), model.params.num_parameters, total_steps)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        losses = []
        for b in range(steps_per_epoch):
            batch = [examples[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            if not batch:
                continue
            losses.append(sft_step(model, batch, cosine_lr(step, total_steps, cfg.lr, cfg.lr_min), cfg))
            step += 1
        result.loss_history.append(float(np.mean(losses)))
        logger.info("sft epoch %d/%d: loss=%.4f", epoch + 1, cfg.epochs, result.loss_history[-1])
    result.accuracy = teacher_forced_accuracy(model, examples)
    logger.info("sft teacher-forced accuracy %.4f", result.accuracy)
    return result


# -- log-probabilities -----------------------------------------------------
def _check_length(model: PolicyModel, prompt_len: int, output_len: int) -> None:
    if prompt_len + output_len > model.context_length:
        raise ContextOverflowError(
            f"prompt ({prompt_len}) + output ({output_len}) exceeds context length {model.context_length}"
        )
    if prompt_len < 1:
        raise ValueError("prompt must hold at least one token")


def sequence_log_prob(model: PolicyModel, prompt_ids: Sequence[int], output_ids: Sequence[int]) -> np.ndarray:
    """Per-token log pi(o_t | prompt, o_<t) for every output token."""
    _check_length(model, len(prompt_ids), len(output_ids))
    if not output_ids:
        return np.zeros(0)
    ids = np.asarray(list(prompt_ids) + list(output_ids)[:-1], dtype=np.int64)[None, :]
    log_probs = model.log_probs(ids)[0]
    positions = np.arange(len(prompt_ids) - 1, ids.shape[1])
    return log_probs[positions, np.asarray(output_ids, dtype=np.int64)]


def batch_log_prob_graph(tape: Tape, model: PolicyModel, prompt_ids: Sequence[int],
                         outputs: Sequence[Sequence[int]]) -> tuple[Var, np.ndarray]:
    """Per-token log-probabilities ``(B, L)`` of right-padded outputs sharing one prompt, plus their mask."""
    width = max(len(o) for o in outputs)
    _check_length(model, len(prompt_ids), width)
    p = len(prompt_ids)
    ids = np.full((len(outputs), p + width - 1), PAD_ID, dtype=np.int64)
    targets = np.full((len(outputs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(outputs), width))
    for row, out in enumerate(outputs):
        full = list(prompt_ids) + list(out)
        ids[row, :len(full) - 1] = full[:-1]
        targets[row, :len(out)] = out
        mask[row, :len(out)] = 1.0
    log_probs = tape.log_softmax(model.graph(tape, ids), axis=-1)
    # keep positions p-1 .. p+width-2: the distributions over output tokens
    picked = tape.gather(log_probs, np.concatenate(
        [np.zeros((len(outputs), p - 1), dtype=np.int64), targets], axis=1))
    selector = np.zeros((p + width - 1, width))
    selector[np.arange(p - 1, p + width - 1), np.arange(width)] = 1.0
    return picked @ tape.constant(selector), mask


# -- sampling --------------------------------------------------------------
@dataclass
class GenerationSample:
    prompt_ids: List[int]
    output_ids: List[int]
    log_probs: np.ndarray
    parsed: ParsedOutput

    @property
    def parse_ok(self) -> bool:
        return self.parsed.parse_ok


def _pick(logits: np.ndarray, cfg: SamplingConfig, rng: np.random.Generator) -> int:
    if cfg.greedy:
        return int(np.argmax(logits))
    scaled = logits / cfg.temperature
    top = np.argsort(-scaled, kind="stable")[:cfg.top_k]
    z = scaled[top] - scaled[top].max()
    probs = np.exp(z) / np.exp(z).sum()
    return int(top[rng.choice(top.size, p=probs)])


def _sample_rows(model: PolicyModel, prompt_ids: Sequence[int], seeds: Sequence[int],
                 cfg: SamplingConfig) -> tuple[List[List[int]], List[List[float]]]:
    prompt = list(prompt_ids)
    if not prompt:
        raise ValueError("prompt must hold at least one token")
    if len(prompt) >= model.context_length:
        raise ContextOverflowError(f"prompt of {len(prompt)} tokens leaves no room in the context")
    rngs = [np.random.default_rng(s) for s in seeds]
    rows = len(seeds)
    seqs = np.tile(np.asarray(prompt, dtype=np.int64), (rows, 1))
    outputs: List[List[int]] = [[] for _ in range(rows)]
    log_probs: List[List[float]] = [[] for _ in range(rows)]
    done = [False] * rows
    budget = min(cfg.max_new_tokens, model.context_length - len(prompt))
    for _ in range(budget):
        logits = model.logits(seqs)[:, -1, :]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        lp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        nxt = np.full(rows, PAD_ID, dtype=np.int64)
        for r in range(rows):
            if done[r]:
                continue
            token = _pick(logits[r], cfg, rngs[r])
            nxt[r] = token
            outputs[r].append(token)
            log_probs[r].append(float(lp[r, token]))
            done[r] = token == EOS_ID
        if all(done):
            break
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
    return outputs, log_probs


def sample(model: PolicyModel, prompt_ids: Sequence[int], cfg: SamplingConfig, seed: int,
           vocab: Vocabulary, use_cot: bool = True) -> GenerationSample:
    """Ancestral sampling; log-probabilities are taken under the untempered, untruncated distribution."""
    outputs, log_probs = _sample_rows(model, prompt_ids, [seed], cfg)
    return GenerationSample(list(prompt_ids), outputs[0], np.asarray(log_probs[0]),
                            parse_output(outputs[0], vocab, use_cot))


def sample_many(model: PolicyModel, prompt_ids: Sequence[int], seeds: Sequence[int], cfg: SamplingConfig,
                vocab: Vocabulary, use_cot: bool = True) -> List[GenerationSample]:
    """One sample per seed, decoded as a single batch."""
    outputs, log_probs = _sample_rows(model, prompt_ids, seeds, cfg)
    return [
        GenerationSample(list(prompt_ids), out, np.asarray(lp), parse_output(out, vocab, use_cot))
        for out, lp in zip(outputs, log_probs)
    ]


def sample_group(model: PolicyModel, prompt_ids: Sequence[int], group_size: int, cfg: SamplingConfig,
                 seed: int, vocab: Vocabulary, use_cot: bool = True) -> List[GenerationSample]:
    if group_size < 2:
        raise GroupSizeError(f"group size must be >= 2, got {group_size}")
    seeds = [derive_seed(seed, "sample", i) for i in range(group_size)]
    return sample_many(model, prompt_ids, seeds, cfg, vocab, use_cot)


def generate_motion_tokens(model: PolicyModel, vocab: Vocabulary, text: str, cfg: SamplingConfig,
                           seed: int = 0, use_cot: bool = True) -> GenerationSample:
    return sample(model, encode_prompt(text, vocab), cfg, seed, vocab, use_cot)
