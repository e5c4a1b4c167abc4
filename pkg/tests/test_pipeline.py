import csv

import pytest
import yaml
from typer.testing import CliRunner

from app.core.config import load_run_config
from app.main import app
from app.schemas.eval import EvalConfig
from app.schemas.run import RunConfig
from app.services.evaluation_service import METRIC_ORDER
from app.services.pipeline_service import STAGES, RunPaths, config_hash, is_complete

runner = CliRunner()

TINY_RUN = {
    "seed": 0,
    "data": {
        "families": {"walk-straight": 10, "squat": 10, "jump": 10, "wave-arm": 10},
        "min_frames": 16,
        "max_frames": 24,
        "blend_overlap": 4,
        "splits": [0.5, 0.2, 0.3],
    },
    "tokenizer": {"codebook_size": 8, "code_dim": 4, "hidden": 8, "epochs": 2, "batch_size": 8, "reset_window": 3},
    "encoders": {"embed_dim": 8, "hidden": 16, "buckets": 64, "epochs": 2, "batch_size": 8, "retrieval_pool": 8},
    "cot": {"workers": 1},
    "sft": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "context_length": 64, "epochs": 2,
            "batch_size": 4},
    "grpo": {"group_size": 2, "prompts_per_step": 1, "total_steps": 2, "log_every": 1,
             "sampling": {"max_new_tokens": 24, "top_k": 8}},
    "eval": {"repeats": 2, "pool": 8, "diversity_pairs": 20, "mmodality_reps": 2, "mmodality_pairs": 1,
             "mmodality_repeats": 1, "mmodality_texts": 2},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """Config path and output directory of one completed pipeline run"""
    root = tmp_path_factory.mktemp("run")
    config = root / "tiny.yaml"
    config.write_text(yaml.safe_dump(TINY_RUN))
    out = root / "out"
    result = runner.invoke(app, ["pipeline", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    return config, out


# =============================================================================
# END TO END
# =============================================================================
def test_pipeline_writes_every_artifact(tiny_run):
    _, out = tiny_run
    paths = RunPaths(out)
    expected = [paths.split("train"), paths.split("val"), paths.split("test"), paths.tokenizer, paths.encoders,
                paths.triplets, paths.vocab, paths.sft, paths.grpo, paths.grpo_log, paths.eval_report,
                paths.eval_real]
    for path in expected:
        assert path.exists(), path
    for stage in STAGES:
        assert paths.manifest(stage).exists(), stage


def test_eval_report_lists_every_metric(tiny_run):
    _, out = tiny_run
    with open(RunPaths(out).eval_report, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [row["metric"] for row in rows] == list(METRIC_ORDER)
    assert all(float(row["ci95"]) >= 0.0 for row in rows)


def test_grpo_log_has_one_row_per_step(tiny_run):
    _, out = tiny_run
    lines = RunPaths(out).grpo_log.read_text().splitlines()
    assert lines[0].startswith("step,mean_reward")
    assert len(lines) == 1 + TINY_RUN["grpo"]["total_steps"]


def test_rerun_skips_completed_stages(tiny_run):
    config, out = tiny_run
    result = runner.invoke(app, ["pipeline", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert result.output.count("up to date, skipped") == len(STAGES)


def test_stage_resume_flag(tiny_run):
    config, out = tiny_run
    result = runner.invoke(app, ["datagen", "--config", str(config), "--out", str(out), "--resume"])
    assert result.exit_code == 0
    assert "datagen: up to date, skipped" in result.output


def test_changed_output_invalidates_stage(tiny_run):
    config, out = tiny_run
    paths = RunPaths(out)
    cfg = load_run_config(config, out_dir=str(out))
    original = paths.grpo_log.read_bytes()
    try:
        paths.grpo_log.write_bytes(original + b"tampered\n")
        assert not is_complete(paths, cfg, "grpo")
        assert is_complete(paths, cfg, "sft")
    finally:
        paths.grpo_log.write_bytes(original)
    assert is_complete(paths, cfg, "grpo")


def test_changed_eval_section_only_reruns_eval(tiny_run):
    config, out = tiny_run
    cfg = load_run_config(config, out_dir=str(out))
    changed = cfg.model_copy(update={"eval": cfg.eval.model_copy(update={"repeats": 3})})
    paths = RunPaths(out)
    assert is_complete(paths, changed, "grpo")
    assert not is_complete(paths, changed, "eval")


def test_generate_reports_parse_result(tiny_run, tmp_path):
    config, out = tiny_run
    frames = tmp_path / "frames.jsonl"
    result = runner.invoke(app, ["generate", "a person jumps twice", "--config", str(config), "--out", str(out),
                                 "--greedy", "--output", str(frames)])
    assert result.exit_code in (0, 1), result.output
    if result.exit_code == 0:
        assert "parse ok" in result.output
        assert frames.read_text().count("\n") >= 1
    else:
        assert "response grammar" in result.output
        assert not frames.exists()


# =============================================================================
# FAILURES
# =============================================================================
def test_stage_without_inputs_names_the_missing_stage(tmp_path):
    result = runner.invoke(app, ["sft", "--out", str(tmp_path / "empty")])
    assert result.exit_code == 2
    assert "cot-build" in result.output


def test_unknown_config_key_exits_with_code_2(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text(yaml.safe_dump({"grpo": {"group_sise": 4}}))
    result = runner.invoke(app, ["datagen", "--config", str(config), "--out", str(tmp_path / "out")])
    assert result.exit_code == 2
    assert "unknown key" in result.output
    assert "group_sise" in result.output


def test_missing_config_file_exits_with_code_2(tmp_path):
    result = runner.invoke(app, ["pipeline", "--config", str(tmp_path / "nope.yaml")])
    assert result.exit_code == 2
    assert "not found" in result.output


# =============================================================================
# CONFIG HASHES
# =============================================================================
def test_config_hash_tracks_stage_sections():
    base = RunConfig()
    changed = RunConfig(eval=EvalConfig(repeats=3))
    assert config_hash(base, "datagen") == config_hash(changed, "datagen")
    assert config_hash(base, "grpo") == config_hash(changed, "grpo")
    assert config_hash(base, "eval") != config_hash(changed, "eval")


def test_config_hash_tracks_seed_and_reasoning_switch():
    base = RunConfig()
    assert config_hash(base, "datagen") != config_hash(RunConfig(seed=1), "datagen")
    assert config_hash(base, "cot-build") == config_hash(RunConfig(no_cot=True), "cot-build")
    assert config_hash(base, "sft") != config_hash(RunConfig(no_cot=True), "sft")


def test_output_directory_is_not_part_of_the_hash():
    assert config_hash(RunConfig(out_dir="a"), "eval") == config_hash(RunConfig(out_dir="b"), "eval")
