"""Single-stage subcommands; each accepts the same run config as ``pipeline``."""
from __future__ import annotations

from typing import Callable

from app.commands.common import (
    ConfigOption, DeterministicOption, NoCotOption, OutOption, ResumeOption, SeedOption,
    build_config, guarded, report_manifest,
)
from app.schemas.run import RunConfig
from app.services.pipeline_service import PipelineService, RunPaths, is_complete


def _stage_command(stage: str, runner: Callable[[RunConfig], object]) -> Callable[..., None]:
    def command(
        config: ConfigOption = None,
        seed: SeedOption = None,
        out: OutOption = None,
        no_cot: NoCotOption = False,
        deterministic: DeterministicOption = False,
        resume: ResumeOption = False,
    ) -> None:
        cfg = guarded(lambda: build_config(config, seed, out, no_cot, deterministic))
        if resume and is_complete(RunPaths(cfg.out_dir), cfg, stage):
            report_manifest(None, stage)
            return
        report_manifest(guarded(lambda: runner(cfg)), stage)

    command.__doc__ = f"Run the {stage} stage."
    return command


datagen = _stage_command("datagen", PipelineService.datagen)
tokenizer_train = _stage_command("tokenizer-train", PipelineService.tokenizer_train)
encoders_train = _stage_command("encoders-train", PipelineService.encoders_train)
cot_build = _stage_command("cot-build", PipelineService.cot_build)
sft = _stage_command("sft", PipelineService.sft)
grpo = _stage_command("grpo", PipelineService.grpo)
evaluate = _stage_command("eval", PipelineService.evaluate)
ablation = _stage_command("ablation", PipelineService.ablation)
