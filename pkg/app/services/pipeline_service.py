"""
Stage orchestration: every stage reads its inputs from the run directory,
writes its outputs there, and records a manifest on success.

A stage is skipped on resume when its manifest carries the same config hash
and every recorded output still has the recorded digest.
"""
from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import orjson

from app.core.checkpoint import atomic_write_bytes
from app.core.errors import ConfigError
from app.models.encoders import EncoderPair
from app.models.motion import MotionSample
from app.models.policy import PolicyModel
from app.models.vocabulary import Vocabulary
from app.models.vqvae import MotionTokenizer
from app.schemas.run import RunConfig, RunManifest
from app.services.cot_engine import build_dataset, load_triplets
from app.services.encoder_service import train_contrastive
from app.services.evaluation_service import evaluate, evaluate_real
from app.services.grpo_service import grpo_train, run_reward_ablation, write_step_logs
from app.services.motion_data import generate_corpus, load_jsonl, save_jsonl, split_corpus
from app.services.policy_service import serialize_example, steps_text, train_sft
from app.services.tokenizer_service import codebook_usage, evaluate_reconstruction, train_tokenizer
from app.utils.hashing import sha256_file, sha256_json
from app.utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

STAGES = ("datagen", "tokenizer-train", "encoders-train", "cot-build", "sft", "grpo", "eval")

# config sections each stage depends on, upstream stages included
STAGE_SECTIONS: Dict[str, Tuple[str, ...]] = {
    "datagen": ("data",),
    "tokenizer-train": ("data", "tokenizer"),
    "encoders-train": ("data", "encoders"),
    "cot-build": ("data", "tokenizer", "cot"),
    "sft": ("data", "tokenizer", "cot", "sft", "no_cot"),
    "grpo": ("data", "tokenizer", "encoders", "cot", "sft", "grpo", "no_cot"),
    "eval": ("data", "tokenizer", "encoders", "cot", "sft", "grpo", "eval", "no_cot"),
    "ablation": ("data", "tokenizer", "encoders", "cot", "sft", "grpo", "no_cot"),
}


class RunPaths:
    """Artifact layout under one run directory."""

    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)

    def split(self, name: str) -> Path:
        return self.root / "data" / f"{name}.jsonl"

    @property
    def tokenizer(self) -> Path:
        return self.root / "tokenizer" / "tokenizer.ckpt"

    @property
    def encoders(self) -> Path:
        return self.root / "encoders" / "encoders.ckpt"

    @property
    def triplets(self) -> Path:
        return self.root / "cot" / "triplets.jsonl"

    @property
    def vocab(self) -> Path:
        return self.root / "policy" / "vocab.json"

    @property
    def sft(self) -> Path:
        return self.root / "policy" / "sft.ckpt"

    @property
    def grpo(self) -> Path:
        return self.root / "policy" / "grpo.ckpt"

    @property
    def grpo_log(self) -> Path:
        return self.root / "grpo" / "steps.csv"

    @property
    def eval_report(self) -> Path:
        return self.root / "eval" / "eval.csv"

    @property
    def eval_real(self) -> Path:
        return self.root / "eval" / "eval_real.csv"

    @property
    def features(self) -> Path:
        return self.root / "eval" / "features.jsonl"

    @property
    def ablation(self) -> Path:
        return self.root / "ablation" / "ablation.csv"

    def manifest(self, stage: str) -> Path:
        return self.root / "manifests" / f"{stage}.json"


def config_hash(cfg: RunConfig, stage: str) -> str:
    dumped = cfg.model_dump(mode="json")
    payload = {"seed": cfg.seed, **{key: dumped[key] for key in STAGE_SECTIONS[stage]}}
    return sha256_json(payload)


def write_manifest(paths: RunPaths, manifest: RunManifest) -> Path:
    path = paths.manifest(manifest.stage)
    atomic_write_bytes(path, orjson.dumps(manifest.model_dump(), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return path


def read_manifest(paths: RunPaths, stage: str) -> Optional[RunManifest]:
    path = paths.manifest(stage)
    if not path.exists():
        return None
    try:
        return RunManifest.model_validate(orjson.loads(path.read_bytes()))
    except (orjson.JSONDecodeError, ValueError):
        logger.warning("Ignoring unreadable manifest %s", path)
        return None


def is_complete(paths: RunPaths, cfg: RunConfig, stage: str) -> bool:
    manifest = read_manifest(paths, stage)
    if manifest is None or manifest.config_hash != config_hash(cfg, stage):
        return False
    for out, digest in manifest.outputs.items():
        path = paths.root / out
        if not path.exists() or sha256_file(path) != digest:
            return False
    return True


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"Missing {path}; run the '{stage}' stage first")
    return path


def _digests(paths: RunPaths, files: Sequence[Path]) -> Dict[str, str]:
    return {str(f.relative_to(paths.root)): sha256_file(f) for f in files}


def _prompts(samples: Sequence[MotionSample]):
    return [(s.text, s.motion) for s in samples]


class PipelineService:
    """One static method per stage; each returns the written manifest."""

    @staticmethod
    def _finish(paths: RunPaths, cfg: RunConfig, stage: str, started: float, inputs: Sequence[Path],
                outputs: Sequence[Path], notes: Optional[List[str]] = None) -> RunManifest:
        manifest = RunManifest(
            stage=stage,
            config_hash=config_hash(cfg, stage),
            inputs=_digests(paths, inputs),
            outputs=_digests(paths, outputs),
            wall_time=time.perf_counter() - started,
            notes=notes or [],
        )
        write_manifest(paths, manifest)
        logger.info("stage %s finished in %.1fs", stage, manifest.wall_time)
        return manifest

    @staticmethod
    def datagen(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        spec = cfg.data.model_copy(update={"seed": derive_seed(cfg.seed, "data", cfg.data.seed)})
        splits = split_corpus(generate_corpus(spec), spec)
        outputs = [save_jsonl(paths.split(name), splits[name]) for name in ("train", "val", "test")]
        notes = [f"{name}: {len(splits[name])} samples" for name in ("train", "val", "test")]
        return PipelineService._finish(paths, cfg, "datagen", started, [], outputs, notes)

    @staticmethod
    def tokenizer_train(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        train = load_jsonl(_require(paths.split("train"), "datagen"))
        val = load_jsonl(_require(paths.split("val"), "datagen"))
        result = train_tokenizer(train, cfg.tokenizer, derive_seed(cfg.seed, "tokenizer"), paths.tokenizer)
        result.tokenizer.save(paths.tokenizer)
        held_out = val or train
        breakdown = evaluate_reconstruction(result.tokenizer, held_out, cfg.tokenizer)
        usage = codebook_usage(result.tokenizer, held_out)
        notes = [f"val reconstruct={breakdown.reconstruct:.6f}", f"val codebook usage={usage:.3f}",
                 f"dead-code resets={result.resets}"]
        return PipelineService._finish(paths, cfg, "tokenizer-train", started,
                                       [paths.split("train"), paths.split("val")], [paths.tokenizer], notes)

    @staticmethod
    def encoders_train(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        train = load_jsonl(_require(paths.split("train"), "datagen"))
        val = load_jsonl(_require(paths.split("val"), "datagen"))
        enc = cfg.encoders
        seed = derive_seed(cfg.seed, "encoders")
        pair = EncoderPair.create(train[0].motion.n_channels, enc.embed_dim, enc.hidden, enc.buckets, seed)
        result = train_contrastive(pair, train, val, enc, seed)
        pair.save(paths.encoders)
        notes = [f"final val top-1={result.accuracy_history[-1]:.3f}"]
        return PipelineService._finish(paths, cfg, "encoders-train", started,
                                       [paths.split("train"), paths.split("val")], [paths.encoders], notes)

    @staticmethod
    def cot_build(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        train = load_jsonl(_require(paths.split("train"), "datagen"))
        tokenizer = MotionTokenizer.load(_require(paths.tokenizer, "tokenizer-train"))
        triplets = build_dataset(train, tokenizer, cfg.cot, paths.triplets, deterministic=cfg.deterministic)
        return PipelineService._finish(paths, cfg, "cot-build", started, [paths.split("train"), paths.tokenizer],
                                       [paths.triplets], [f"{len(triplets)} triplets"])

    @staticmethod
    def sft(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        triplets = load_triplets(_require(paths.triplets, "cot-build"))
        tokenizer = MotionTokenizer.load(_require(paths.tokenizer, "tokenizer-train"))
        texts = [s.text for name in ("train", "val", "test") for s in load_jsonl(paths.split(name))]
        texts += [steps_text(t.cot_steps) for t in triplets]
        vocab = Vocabulary.build(texts, tokenizer.codebook_size)
        vocab.save(paths.vocab)
        use_cot = not cfg.no_cot
        examples = [serialize_example(t, vocab, use_cot) for t in triplets]
        model = PolicyModel.create(vocab.size, cfg.sft, rng_for(cfg.seed, "policy-init"))
        result = train_sft(model, examples, cfg.sft, derive_seed(cfg.seed, "sft"))
        model.save(paths.sft, use_cot=use_cot)
        notes = [f"vocabulary size={vocab.size}", f"teacher-forced accuracy={result.accuracy:.4f}"]
        return PipelineService._finish(paths, cfg, "sft", started, [paths.triplets, paths.tokenizer],
                                       [paths.vocab, paths.sft], notes)

    @staticmethod
    def grpo(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        policy = PolicyModel.load(_require(paths.sft, "sft"))
        vocab = Vocabulary.load(paths.vocab)
        tokenizer = MotionTokenizer.load(_require(paths.tokenizer, "tokenizer-train"))
        pair = EncoderPair.load(_require(paths.encoders, "encoders-train"))
        train = load_jsonl(paths.split("train"))
        use_cot = not cfg.no_cot
        result = grpo_train(policy, vocab, tokenizer, pair, _prompts(train), cfg.grpo,
                            derive_seed(cfg.seed, "grpo"), use_cot, log_path=paths.grpo_log,
                            checkpoint_path=paths.grpo)
        policy.save(paths.grpo, use_cot=use_cot)
        write_step_logs(result.logs, paths.grpo_log)
        last = result.logs[-1]
        notes = [f"final mean reward={last.mean_reward:.4f}", f"final format rate={last.format_rate:.3f}"]
        return PipelineService._finish(paths, cfg, "grpo", started,
                                       [paths.sft, paths.vocab, paths.tokenizer, paths.encoders],
                                       [paths.grpo, paths.grpo_log], notes)

    @staticmethod
    def evaluate(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        checkpoint = paths.grpo if paths.grpo.exists() else _require(paths.sft, "sft")
        policy = PolicyModel.load(checkpoint)
        vocab = Vocabulary.load(paths.vocab)
        tokenizer = MotionTokenizer.load(_require(paths.tokenizer, "tokenizer-train"))
        pair = EncoderPair.load(_require(paths.encoders, "encoders-train"))
        test = load_jsonl(_require(paths.split("test"), "datagen"))
        seed = derive_seed(cfg.seed, "eval")
        features = paths.features if cfg.eval.dump_features else None
        report = evaluate(policy, vocab, tokenizer, pair, test, cfg.eval, cfg.grpo.sampling, seed,
                          not cfg.no_cot, paths.eval_report, features)
        evaluate_real(pair, test, cfg.eval, seed, paths.eval_real)
        outputs = [paths.eval_report, paths.eval_real] + ([features] if features else [])
        top1 = report.get("R-Precision Top-1")
        notes = [f"checkpoint={checkpoint.name}"] + ([f"top-1={top1.estimate:.3f}"] if top1 else [])
        return PipelineService._finish(paths, cfg, "eval", started,
                                       [checkpoint, paths.vocab, paths.tokenizer, paths.encoders,
                                        paths.split("test")], outputs, notes)

    @staticmethod
    def ablation(cfg: RunConfig) -> RunManifest:
        started = time.perf_counter()
        paths = RunPaths(cfg.out_dir)
        policy = PolicyModel.load(_require(paths.sft, "sft"))
        vocab = Vocabulary.load(paths.vocab)
        tokenizer = MotionTokenizer.load(_require(paths.tokenizer, "tokenizer-train"))
        pair = EncoderPair.load(_require(paths.encoders, "encoders-train"))
        train = load_jsonl(paths.split("train"))
        val = load_jsonl(paths.split("val")) or train
        summary = run_reward_ablation(policy, vocab, tokenizer, pair, _prompts(train), _prompts(val), cfg.grpo,
                                      derive_seed(cfg.seed, "ablation"), not cfg.no_cot, paths.ablation)
        notes = [f"{name}: {score:.4f}" for name, score in summary.items()]
        return PipelineService._finish(paths, cfg, "ablation", started, [paths.sft, paths.vocab],
                                       [paths.ablation], notes)

    @staticmethod
    def run(cfg: RunConfig, resume: bool = True,
            stages: Sequence[str] = STAGES) -> Dict[str, Optional[RunManifest]]:
        """Run ``stages`` in order; the first failure aborts the rest."""
        runners: Dict[str, Callable[[RunConfig], RunManifest]] = {
            "datagen": PipelineService.datagen,
            "tokenizer-train": PipelineService.tokenizer_train,
            "encoders-train": PipelineService.encoders_train,
            "cot-build": PipelineService.cot_build,
            "sft": PipelineService.sft,
            "grpo": PipelineService.grpo,
            "eval": PipelineService.evaluate,
            "ablation": PipelineService.ablation,
        }
        paths = RunPaths(cfg.out_dir)
        done: Dict[str, Optional[RunManifest]] = {}
        for stage in stages:
            if resume and is_complete(paths, cfg, stage):
                logger.info("stage %s is up to date; skipping", stage)
                done[stage] = None
                continue
            done[stage] = runners[stage](cfg)
        return done

