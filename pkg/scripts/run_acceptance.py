"""
Measured training-trend checks that are too slow for the unit suite.

    python scripts/run_acceptance.py            # every check
    python scripts/run_acceptance.py --only sft  # one check

Prints a pass/fail table and exits non-zero when any check fails.
"""
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

# Add the project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from app.core.config import load_run_config
from app.core.logging import setup_logging
from app.models.encoders import EncoderPair
from app.models.policy import PolicyModel
from app.models.vocabulary import Vocabulary
from app.schemas.corpus import DEFAULT_FAMILY_COUNTS, CorpusSpec
from app.schemas.cot import CotConfig
from app.schemas.grpo import GRPOConfig
from app.schemas.training import EncoderConfig, SamplingConfig, SftConfig, TokenizerConfig
from app.services.cot_engine import build_dataset
from app.services.encoder_service import train_contrastive
from app.services.grpo_service import grpo_train, run_reward_ablation
from app.services.motion_data import generate_corpus, split_corpus
from app.services.pipeline_service import STAGES, PipelineService, RunPaths, read_manifest
from app.services.policy_service import encode_prompt, sample, serialize_example, steps_text, train_sft
from app.services.tokenizer_service import codebook_usage, evaluate_reconstruction, train_tokenizer
from app.utils.seeding import rng_for

console = Console()
cli = typer.Typer(add_completion=False)

# name, passed, measured value, threshold, seconds
Row = Tuple[str, bool, str, str, float]


def _corpus(total: int, seed: int = 0):
    scale = total / sum(DEFAULT_FAMILY_COUNTS.values())
    families = {f: max(1, round(n * scale)) for f, n in DEFAULT_FAMILY_COUNTS.items()}
    spec = CorpusSpec(families=families, seed=seed)
    return split_corpus(generate_corpus(spec), spec)


def _greedy_parse_rate(policy: PolicyModel, vocab: Vocabulary, texts: List[str], max_new_tokens: int = 64) -> float:
    cfg = SamplingConfig(greedy=True, max_new_tokens=max_new_tokens)
    return float(np.mean([sample(policy, encode_prompt(t, vocab), cfg, 0, vocab).parse_ok for t in texts]))


class Workbench:
    """Shared artifacts built lazily so each check trains only what it needs."""

    def __init__(self, seed: int):
        self.seed = seed
        self._splits = None
        self._tokenizer = None
        self._pair = None
        self._triplets = None
        self._vocab = None

    @property
    def splits(self):
        if self._splits is None:
            self._splits = _corpus(512, self.seed)
        return self._splits

    @property
    def tokenizer(self):
        if self._tokenizer is None:
            self._tokenizer = train_tokenizer(self.splits["train"], TokenizerConfig(), self.seed).tokenizer
        return self._tokenizer

    @property
    def pair(self):
        if self._pair is None:
            cfg = EncoderConfig()
            train = self.splits["train"]
            pair = EncoderPair.create(train[0].motion.n_channels, cfg.embed_dim, cfg.hidden, cfg.buckets, self.seed)
            train_contrastive(pair, train, self.splits["val"], cfg, self.seed)
            self._pair = pair
        return self._pair

    @property
    def triplets(self):
        if self._triplets is None:
            self._triplets = build_dataset(self.splits["train"], self.tokenizer, CotConfig(), deterministic=True)
        return self._triplets

    @property
    def vocab(self):
        if self._vocab is None:
            texts = [s.text for split in self.splits.values() for s in split]
            texts += [steps_text(t.cot_steps) for t in self.triplets]
            self._vocab = Vocabulary.build(texts, self.tokenizer.codebook_size)
        return self._vocab

    def sft_policy(self, triplets, epochs: int) -> Tuple[PolicyModel, float]:
        cfg = SftConfig(epochs=epochs)
        model = PolicyModel.create(self.vocab.size, cfg, rng_for(self.seed, "policy-init"))
        result = train_sft(model, [serialize_example(t, self.vocab) for t in triplets], cfg, self.seed)
        return model, result.accuracy


def check_tokenizer(bench: Workbench) -> List[Row]:
    started = time.perf_counter()
    cfg = TokenizerConfig()
    result = train_tokenizer(bench.splits["train"], cfg, bench.seed)
    val = bench.splits["val"]
    final = evaluate_reconstruction(result.tokenizer, val, cfg).reconstruct
    first = result.history[0].reconstruct
    usage = codebook_usage(result.tokenizer, val)
    bench._tokenizer = result.tokenizer
    elapsed = time.perf_counter() - started
    return [
        ("tokenizer reconstruction", final <= 0.2 * first, f"{final:.5f} vs epoch-0 {first:.5f}", "<= 20%", elapsed),
        ("tokenizer codebook usage", usage >= 0.5, f"{usage:.3f}", ">= 0.50", elapsed),
    ]


def check_sft(bench: Workbench) -> List[Row]:
    started = time.perf_counter()
    triplets = bench.triplets[:32]
    model, accuracy = bench.sft_policy(triplets, SftConfig().epochs)
    rate = _greedy_parse_rate(model, bench.vocab, [t.text for t in triplets])
    elapsed = time.perf_counter() - started
    return [
        ("sft teacher-forced accuracy", accuracy >= 0.99, f"{accuracy:.4f}", ">= 0.99", elapsed),
        ("sft greedy parse rate", rate >= 0.95, f"{rate:.3f}", ">= 0.95", elapsed),
    ]


def check_grpo(bench: Workbench, weak_epochs: int) -> List[Row]:
    started = time.perf_counter()
    triplets = bench.triplets[:32]
    prompts = [(s.text, s.motion) for s in bench.splits["train"][:32]]
    weak, _ = bench.sft_policy(triplets, weak_epochs)
    start_rate = _greedy_parse_rate(weak, bench.vocab, [t.text for t in triplets])
    cfg = GRPOConfig(sampling=SamplingConfig(max_new_tokens=64))
    result = grpo_train(weak.clone(), bench.vocab, bench.tokenizer, bench.pair, prompts, cfg, bench.seed)
    head = float(np.mean([log.mean_reward for log in result.logs[:10]]))
    tail = float(np.mean([log.mean_reward for log in result.logs[-10:]]))
    final_format = float(np.mean([log.format_rate for log in result.logs[-10:]]))

    anchored = weak.clone()
    grpo_train(anchored, bench.vocab, bench.tokenizer, bench.pair, prompts,
               cfg.model_copy(update={"beta": 100.0}), bench.seed, total_steps=50)
    greedy = SamplingConfig(greedy=True, max_new_tokens=64)
    same = [
        sample(anchored, encode_prompt(t, bench.vocab), greedy, 0, bench.vocab).output_ids
        == sample(weak, encode_prompt(t, bench.vocab), greedy, 0, bench.vocab).output_ids
        for t, _ in prompts
    ]
    elapsed = time.perf_counter() - started
    return [
        ("grpo reward improvement", tail >= 1.2 * head,
         f"{head:.4f} -> {tail:.4f} (start format {start_rate:.2f})", ">= +20%", elapsed),
        ("grpo final format rate", final_format >= 0.95, f"{final_format:.3f}", ">= 0.95", elapsed),
        ("grpo beta=100 stays on reference", np.mean(same) >= 0.95, f"{np.mean(same):.3f}", ">= 0.95", elapsed),
    ]


def check_ablation(bench: Workbench) -> List[Row]:
    started = time.perf_counter()
    triplets = bench.triplets[:32]
    policy, _ = bench.sft_policy(triplets, SftConfig().epochs)
    train = [(s.text, s.motion) for s in bench.splits["train"][:32]]
    val = [(s.text, s.motion) for s in bench.splits["val"]]
    cfg = GRPOConfig(ablation_configs=["full", "format_only"], sampling=SamplingConfig(max_new_tokens=64))
    summary = run_reward_ablation(policy, bench.vocab, bench.tokenizer, bench.pair, train, val, cfg, bench.seed)
    elapsed = time.perf_counter() - started
    return [("ablation full >= format-only", summary["full"] >= summary["format_only"],
             f"{summary['full']:.4f} vs {summary['format_only']:.4f}", "full >= format_only", elapsed)]


def check_determinism(bench: Workbench) -> List[Row]:
    started = time.perf_counter()
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            cfg = load_run_config(project_root / "configs" / "tiny.yaml", out_dir=str(Path(tmp) / run),
                                  seed=bench.seed, deterministic=True)
            PipelineService.run(cfg, resume=False, stages=STAGES)
            paths = RunPaths(cfg.out_dir)
            digests.append({stage: read_manifest(paths, stage).outputs for stage in STAGES})
    elapsed = time.perf_counter() - started
    return [("deterministic pipeline outputs", digests[0] == digests[1], "identical" if digests[0] == digests[1]
             else "differ", "bit-identical", elapsed)]


@cli.command()
def main(
    only: Optional[str] = typer.Option(None, help="tokenizer, sft, grpo, ablation or determinism"),
    seed: int = typer.Option(0, help="Master seed"),
    weak_epochs: int = typer.Option(4, help="SFT epochs for the weakened GRPO starting point"),
) -> None:
    setup_logging("WARNING")
    bench = Workbench(seed)
    checks: Dict[str, Callable[[], List[Row]]] = {
        "tokenizer": lambda: check_tokenizer(bench),
        "sft": lambda: check_sft(bench),
        "grpo": lambda: check_grpo(bench, weak_epochs),
        "ablation": lambda: check_ablation(bench),
        "determinism": lambda: check_determinism(bench),
    }
    if only is not None and only not in checks:
        console.print(f"[red]Unknown check '{only}'[/red]")
        raise typer.Exit(code=2)

    rows: List[Row] = []
    for name, check in checks.items():
        if only in (None, name):
            console.print(f"running {name} ...")
            rows.extend(check())

    table = Table(title="Acceptance checks")
    for column in ("check", "result", "measured", "threshold", "seconds"):
        table.add_column(column)
    for name, passed, measured, threshold, seconds in rows:
        table.add_row(name, "[green]pass[/green]" if passed else "[red]FAIL[/red]", measured, threshold,
                      f"{seconds:.1f}")
    console.print(table)
    if not all(row[1] for row in rows):
        raise typer.Exit(code=1)


if __name__ == "__main__":
    cli()
