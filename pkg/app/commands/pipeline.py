from typing import Annotated

import typer

from app.commands.common import (
    ConfigOption, DeterministicOption, NoCotOption, OutOption, SeedOption, build_config, guarded, report_manifest,
)
from app.services.pipeline_service import STAGES, PipelineService


def pipeline(
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    no_cot: NoCotOption = False,
    deterministic: DeterministicOption = False,
    resume: Annotated[bool, typer.Option("--resume/--no-resume", help="Skip stages whose manifests are current")] = True,
) -> None:
    """Run datagen through eval in order."""
    cfg = guarded(lambda: build_config(config, seed, out, no_cot, deterministic))
    manifests = guarded(lambda: PipelineService.run(cfg, resume=resume, stages=STAGES))
    for stage in STAGES:
        report_manifest(manifests.get(stage), stage)
