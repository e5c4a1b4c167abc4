"""
Chain-of-thought data engine: request, validate and package
(description, reasoning, motion tokens) triplets.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import orjson

from app.core.checkpoint import atomic_write_bytes
from app.core.errors import CorpusFormatError, CotGenerationError, TokenizerMismatchError
from app.models.motion import MotionSample
from app.models.vqvae import MotionTokenizer
from app.schemas.cot import CotBackendConfig, CotConfig, CotLimits, CoTTrace, QualityReport, Triplet
from app.services.cot_client import ChatCompletionClient
from app.services.template_cot import template_cot
from app.utils.text import jaccard, normalize_text, normalized_words

logger = logging.getLogger(__name__)

# (description, attempt) -> raw backend text
CotBackend = Callable[[str, int], str]

_THINK_OPEN = "<think>"
_THINK_CLOSE = "</think>"
_STEP_LINE = re.compile(r"^\s*(\d+)[.)]\s*(.+?)\s*$")


def make_backend(cfg: CotBackendConfig, client: Optional[ChatCompletionClient] = None) -> CotBackend:
    if cfg.kind == "template":
        return lambda description, attempt: template_cot(description, cfg.seed)
    remote = client or ChatCompletionClient(cfg)
    return lambda description, attempt: remote.complete(description)


def request_cot(description: str, cfg: CotBackendConfig, client: Optional[ChatCompletionClient] = None) -> str:
    return make_backend(cfg, client)(description, 1)


def parse_steps(think: str) -> List[str]:
    steps = []
    for line in think.splitlines():
        match = _STEP_LINE.match(line)
        if match:
            step = match.group(2).rstrip(".").strip()
            if step:
                steps.append(step)
    return steps


def _redundant(steps: Sequence[str], threshold: float) -> bool:
    normalized = [normalize_text(s) for s in steps]
    words = [normalized_words(s) for s in steps]
    for i in range(len(steps)):
        for j in range(i + 1, len(steps)):
            if normalized[i] == normalized[j] or jaccard(words[i], words[j]) > threshold:
                return True
    return False


def validate_cot(raw: str, limits: CotLimits, attempt: int = 1) -> Tuple[Optional[CoTTrace], QualityReport]:
    """Rule-based quality control; returns the parsed trace only when every check passes."""
    opens, closes = raw.count(_THINK_OPEN), raw.count(_THINK_CLOSE)
    format_ok = opens == 1 and closes == 1 and raw.index(_THINK_OPEN) < raw.index(_THINK_CLOSE)
    if not format_ok:
        return None, QualityReport(format_ok=False, attempt=attempt)

    think = raw[raw.index(_THINK_OPEN) + len(_THINK_OPEN):raw.index(_THINK_CLOSE)].strip()
    steps = parse_steps(think)
    report = QualityReport(
        format_ok=True,
        length_ok=len(think.split()) <= limits.max_words,
        redundancy_ok=not _redundant(steps, limits.redundancy_jaccard),
        step_count_ok=1 <= len(steps) <= limits.max_steps,
        step_count=len(steps),
        attempt=attempt,
    )
    if not report.accepted:
        return None, report
    return CoTTrace(think=think, steps=steps), report


def serialize_trace(trace: CoTTrace) -> str:
    return f"{_THINK_OPEN} {trace.think}\n{_THINK_CLOSE}"


def generate_with_retry(
    description: str,
    cfg: CotBackendConfig,
    limits: CotLimits,
    max_attempts: int = 3,
    backend: Optional[CotBackend] = None,
) -> CoTTrace:
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    backend = backend or make_backend(cfg)
    report = QualityReport()
    for attempt in range(1, max_attempts + 1):
        trace, report = validate_cot(backend(description, attempt), limits, attempt)
        if trace is not None:
            return trace
        logger.debug("CoT for %r rejected on attempt %d: %s", description, attempt, report.model_dump())
    raise CotGenerationError(
        f"No acceptable chain of thought for {description!r} after {max_attempts} attempt(s)", report
    )


def build_dataset(
    samples: Sequence[MotionSample],
    tokenizer: MotionTokenizer,
    cfg: CotConfig,
    out_path: Optional[Union[str, Path]] = None,
    deterministic: bool = False,
    backend: Optional[CotBackend] = None,
) -> List[Triplet]:
    """One triplet per sample in corpus order, optionally written as JSONL."""
    for s in samples:
        if s.motion.n_channels != tokenizer.n_channels:
            raise TokenizerMismatchError(
                f"Sample {s.id} has {s.motion.n_channels} channels; tokenizer expects {tokenizer.n_channels}"
            )
    if not tokenizer.codebook.initialized:
        logger.warning("Tokenizer codebook was never fitted to data; motion tokens come from random codes")
    backend = backend or make_backend(cfg.backend)

    def build_one(sample: MotionSample) -> Triplet:
        trace = generate_with_retry(sample.text, cfg.backend, cfg.limits, cfg.max_attempts, backend)
        tokens = tokenizer.tokenize(sample.motion)
        return Triplet(id=sample.id, text=sample.text, cot_think=trace.think, cot_steps=trace.steps,
                       motion_tokens=[int(t) for t in tokens])

    if deterministic or cfg.workers == 1:
        triplets = [build_one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            triplets = list(pool.map(build_one, samples))
    logger.info("Built %d triplets", len(triplets))
    if out_path is not None:
        save_triplets(triplets, out_path)
    return triplets


def save_triplets(triplets: Sequence[Triplet], path: Union[str, Path]) -> Path:
    body = b"".join(orjson.dumps(t.model_dump()) + b"\n" for t in triplets)
    atomic_write_bytes(path, body)
    return Path(path)


def load_triplets(path: Union[str, Path]) -> List[Triplet]:
    triplets = []
    with open(path, "rb") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                triplets.append(Triplet.model_validate(orjson.loads(line)))
            except (orjson.JSONDecodeError, ValueError) as exc:
                raise CorpusFormatError(line_no, str(exc)) from exc
    return triplets
