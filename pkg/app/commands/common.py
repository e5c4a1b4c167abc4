"""Options and error handling shared by every subcommand."""
from __future__ import annotations

from pathlib import Path
from typing import Annotated, Callable, Optional, TypeVar

import typer
from rich.console import Console

from app.core.config import load_run_config, settings
from app.core.errors import MotionPipelineError
from app.core.logging import setup_logging
from app.schemas.run import RunConfig, RunManifest

T = TypeVar("T")

console = Console()
err_console = Console(stderr=True, soft_wrap=True)

ConfigOption = Annotated[Optional[Path], typer.Option("--config", "-c", help="YAML run config")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", help="Master seed")]
OutOption = Annotated[Optional[str], typer.Option("--out", help="Run output directory")]
NoCotOption = Annotated[bool, typer.Option("--no-cot", help="Train and sample without the reasoning span")]
DeterministicOption = Annotated[bool, typer.Option("--deterministic", help="Single-threaded, reproducible run")]
ResumeOption = Annotated[bool, typer.Option("--resume", help="Skip the stage when its manifest is current")]


def build_config(config: Optional[Path], seed: Optional[int], out: Optional[str], no_cot: bool,
                 deterministic: bool) -> RunConfig:
    setup_logging(settings.LOG_LEVEL)
    return load_run_config(
        config,
        seed=seed,
        out_dir=out,
        no_cot=True if no_cot else None,
        deterministic=True if deterministic else None,
    )


def guarded(action: Callable[[], T]) -> T:
    """Run ``action``; a pipeline error prints in red and exits with its code."""
    try:
        return action()
    except MotionPipelineError as exc:
        err_console.print(f"[red]Error ({type(exc).__name__}):[/red] {exc.detail}", markup=True, highlight=False)
        raise typer.Exit(code=exc.exit_code) from exc


def report_manifest(manifest: Optional[RunManifest], stage: str) -> None:
    if manifest is None:
        console.print(f"[yellow]{stage}[/yellow]: up to date, skipped")
        return
    console.print(f"[green]{stage}[/green] done in {manifest.wall_time:.1f}s")
    for out, digest in manifest.outputs.items():
        console.print(f"  wrote {out} (sha256 {digest[:12]})")
    for note in manifest.notes:
        console.print(f"  {note}")
