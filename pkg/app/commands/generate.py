"""Generate a motion for one description from a trained policy."""
from pathlib import Path
from typing import Annotated, Optional

import orjson
import typer

from app.commands.common import ConfigOption, NoCotOption, OutOption, SeedOption, build_config, console, guarded
from app.core.checkpoint import atomic_write_bytes
from app.core.errors import UnparsableOutputError
from app.models.policy import PolicyModel
from app.models.vocabulary import Vocabulary
from app.models.vqvae import MotionTokenizer
from app.schemas.training import SamplingConfig
from app.services.pipeline_service import RunPaths
from app.services.policy_service import GenerationSample, generate_motion_tokens


def _run(text: str, checkpoint: Optional[Path], greedy: bool, seed: int, output: Optional[Path],
         paths: RunPaths, sampling: SamplingConfig, use_cot: bool) -> GenerationSample:
    ckpt = checkpoint or (paths.grpo if paths.grpo.exists() else paths.sft)
    policy = PolicyModel.load(ckpt)
    vocab = Vocabulary.load(paths.vocab)
    tokenizer = MotionTokenizer.load(paths.tokenizer)
    cfg = sampling.model_copy(update={"greedy": greedy or sampling.greedy})
    result = generate_motion_tokens(policy, vocab, text, cfg, seed, use_cot)
    if not result.parse_ok:
        raise UnparsableOutputError(vocab.decode_words(result.output_ids))
    motion = tokenizer.decode(result.parsed.motion_tokens)
    if output is not None:
        lines = b"".join(orjson.dumps(frame.tolist()) + b"\n" for frame in motion.frames)
        atomic_write_bytes(output, lines)
    return result


def generate(
    text: Annotated[str, typer.Argument(help="Motion description")],
    checkpoint: Annotated[Optional[Path], typer.Option("--checkpoint", help="Policy checkpoint")] = None,
    greedy: Annotated[bool, typer.Option("--greedy", help="Argmax decoding")] = False,
    output: Annotated[Optional[Path], typer.Option("--output", "-o", help="Decoded frames as JSONL")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    no_cot: NoCotOption = False,
) -> None:
    """Print the reasoning and motion tokens for TEXT and optionally write the decoded frames."""
    cfg = guarded(lambda: build_config(config, seed, out, no_cot, False))
    result = guarded(lambda: _run(text, checkpoint, greedy, cfg.seed, output, RunPaths(cfg.out_dir),
                                  cfg.grpo.sampling, not cfg.no_cot))
    if result.parsed.think is not None:
        console.print(f"[bold]think:[/bold] {result.parsed.think}")
    console.print(f"[bold]motion tokens:[/bold] {' '.join(f'M_{t}' for t in result.parsed.motion_tokens or [])}")
    console.print("[green]parse ok[/green]")
    if output is not None:
        console.print(f"wrote {output}")
