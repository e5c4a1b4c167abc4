"""
Repeated evaluation of the generation pipeline with 95% confidence intervals.

Each repeat regenerates one motion per test description with a fresh seed
and recomputes every metric; MModality runs only on the first
``mmodality_repeats`` repeats.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import orjson

from app.core.errors import InsufficientSamplesError, MetricError, MotionPipelineError
from app.models.encoders import EncoderPair
from app.models.motion import MotionSample, MotionSequence
from app.models.policy import PolicyModel
from app.models.vocabulary import Vocabulary
from app.models.vqvae import MotionTokenizer
from app.schemas.eval import EvalConfig, EvalReport, MetricEstimate
from app.schemas.training import SamplingConfig
from app.services.metrics import Generator, confidence_interval, diversity, fid, mm_dist, mmodality, r_precision_curve
from app.services.policy_service import encode_prompt, sample_many
from app.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

TOP_K = (1, 2, 3)
METRIC_ORDER = ("R-Precision Top-1", "R-Precision Top-2", "R-Precision Top-3",
                "FID", "Diversity", "MM-Dist", "MModality")


def _measure(name: str, fn: Callable[[], float]) -> float:
    try:
        return fn()
    except MotionPipelineError as exc:
        raise MetricError(name, exc) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise MetricError(name, exc) from exc


def policy_generator(policy: PolicyModel, vocab: Vocabulary, tokenizer: MotionTokenizer, sampling: SamplingConfig,
                     use_cot: bool = True) -> Generator:
    """Text -> ``n`` decoded motions, ``None`` where the output did not parse."""
    def generate(text: str, n: int, seed: int) -> List[Optional[MotionSequence]]:
        seeds = [derive_seed(seed, "gen", i) for i in range(n)]
        samples = sample_many(policy, encode_prompt(text, vocab), seeds, sampling, vocab, use_cot)
        return [tokenizer.decode(s.parsed.motion_tokens) if s.parse_ok else None for s in samples]
    return generate


def embed_generated(motions: Sequence[Optional[MotionSequence]], pair: EncoderPair) -> np.ndarray:
    emb = np.zeros((len(motions), pair.embed_dim))
    good = [i for i, m in enumerate(motions) if m is not None]
    if len(good) < len(motions):
        logger.warning("%d of %d generations did not parse; using zero embeddings", len(motions) - len(good),
                       len(motions))
    if good:
        emb[good] = pair.embed_motions([motions[i] for i in good])
    return emb


def summarize(per_repeat: Dict[str, List[float]]) -> EvalReport:
    metrics = []
    for name in METRIC_ORDER:
        values = per_repeat.get(name)
        if not values:
            continue
        estimate, half_width = confidence_interval(values)
        metrics.append(MetricEstimate(metric=name, estimate=estimate, ci95=half_width, repeats=len(values)))
    return EvalReport(metrics=metrics)


def write_report(report: EvalReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "estimate", "ci95", "repeats"])
        for m in report.metrics:
            writer.writerow([m.metric, repr(float(m.estimate)), repr(float(m.ci95)), m.repeats])
    return path


def _dump_features(fh, source: str, repeat: int, rows: np.ndarray) -> None:
    for row in rows:
        fh.write(orjson.dumps({"source": source, "repeat": repeat, "features": row},
                              option=orjson.OPT_SERIALIZE_NUMPY) + b"\n")


def evaluate(policy: PolicyModel, vocab: Vocabulary, tokenizer: MotionTokenizer, pair: EncoderPair,
             test: Sequence[MotionSample], cfg: EvalConfig, sampling: SamplingConfig, seed: int = 0,
             use_cot: bool = True, out_path: Optional[Union[str, Path]] = None,
             features_path: Optional[Union[str, Path]] = None) -> EvalReport:
    if len(test) < cfg.pool:
        raise InsufficientSamplesError(f"evaluation needs at least {cfg.pool} test samples, got {len(test)}")
    generator = policy_generator(policy, vocab, tokenizer, sampling, use_cot)
    texts = [s.text for s in test]
    text_emb = pair.embed_texts(texts)
    real_emb = pair.embed_motions([s.motion for s in test])
    per_repeat: Dict[str, List[float]] = {name: [] for name in METRIC_ORDER}
    dump = None
    if features_path is not None:
        Path(features_path).parent.mkdir(parents=True, exist_ok=True)
        dump = open(features_path, "wb")
        _dump_features(dump, "real", -1, real_emb)
    try:
        for r in range(cfg.repeats):
            rep_seed = derive_seed(seed, "eval", r)
            motions = [generator(text, 1, derive_seed(rep_seed, "text", i))[0] for i, text in enumerate(texts)]
            gen_emb = embed_generated(motions, pair)
            if dump is not None:
                _dump_features(dump, "generated", r, gen_emb)
            curve = _measure("R-Precision", lambda: r_precision_curve(text_emb, gen_emb, TOP_K, cfg.pool, rep_seed))
            for k in TOP_K:
                per_repeat[f"R-Precision Top-{k}"].append(curve[k])
            per_repeat["FID"].append(_measure("FID", lambda: fid(real_emb, gen_emb)))
            per_repeat["Diversity"].append(
                _measure("Diversity", lambda: diversity(gen_emb, cfg.diversity_pairs, rep_seed)))
            per_repeat["MM-Dist"].append(_measure("MM-Dist", lambda: mm_dist(text_emb, gen_emb, cfg.mm_dist_mode)))
            if r < cfg.mmodality_repeats:
                per_repeat["MModality"].append(_measure("MModality", lambda: mmodality(
                    generator, texts[:cfg.mmodality_texts], cfg.mmodality_reps, cfg.mmodality_pairs, pair, rep_seed)))
            logger.info("eval repeat %d/%d: top-1=%.3f fid=%.4f", r + 1, cfg.repeats,
                        per_repeat["R-Precision Top-1"][-1], per_repeat["FID"][-1])
    finally:
        if dump is not None:
            dump.close()
    report = summarize(per_repeat)
    if out_path is not None:
        write_report(report, out_path)
    return report


def evaluate_real(pair: EncoderPair, test: Sequence[MotionSample], cfg: EvalConfig, seed: int = 0,
                  out_path: Optional[Union[str, Path]] = None) -> EvalReport:
    """Reference row computed on ground-truth test motions."""
    text_emb = pair.embed_texts([s.text for s in test])
    real_emb = pair.embed_motions([s.motion for s in test])
    per_repeat: Dict[str, List[float]] = {name: [] for name in METRIC_ORDER}
    for r in range(cfg.repeats):
        rep_seed = derive_seed(seed, "eval-real", r)
        curve = _measure("R-Precision", lambda: r_precision_curve(text_emb, real_emb, TOP_K, cfg.pool, rep_seed))
        for k in TOP_K:
            per_repeat[f"R-Precision Top-{k}"].append(curve[k])
        per_repeat["FID"].append(_measure("FID", lambda: fid(real_emb, real_emb)))
        per_repeat["Diversity"].append(_measure("Diversity", lambda: diversity(real_emb, cfg.diversity_pairs, rep_seed)))
        per_repeat["MM-Dist"].append(_measure("MM-Dist", lambda: mm_dist(text_emb, real_emb, cfg.mm_dist_mode)))
    report = summarize(per_repeat)
    if out_path is not None:
        write_report(report, out_path)
    return report
