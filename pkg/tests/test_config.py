from pathlib import Path

import pytest

from app.core.config import load_run_config, parse_run_config
from app.core.errors import ConfigError


def test_defaults_without_a_file():
    cfg = load_run_config()
    assert cfg.seed == 0
    assert cfg.grpo.group_size == 8
    assert cfg.eval.repeats == 20
    assert sum(cfg.data.families.values()) == 420


def test_overrides_win_over_the_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 4\nout_dir: from-file\nsft:\n  epochs: 3\n")
    cfg = load_run_config(path, seed=9, out_dir=None, no_cot=True)
    assert cfg.seed == 9
    assert cfg.out_dir == "from-file"
    assert cfg.no_cot is True
    assert cfg.sft.epochs == 3


def test_empty_file_means_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_run_config(path) == load_run_config()


@pytest.mark.parametrize("content,message", [
    ("- just\n- a list\n", "mapping"),
    ("seed: [unclosed\n", "not valid YAML"),
    ("tokenizer:\n  codebook_size: 1\n", "tokenizer.codebook_size"),
    ("data:\n  splits: [0.5, 0.5, 0.5]\n", "split ratios"),
])
def test_bad_files_raise_config_error(tmp_path, content, message):
    path = tmp_path / "bad.yaml"
    path.write_text(content)
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert message in info.value.detail
    assert info.value.exit_code == 2


def test_unknown_nested_key_is_named():
    with pytest.raises(ConfigError) as info:
        parse_run_config({"eval": {"repeat": 3}})
    assert "unknown key 'eval.repeat'" in info.value.detail


@pytest.mark.parametrize("name", ["default.yaml", "tiny.yaml"])
def test_shipped_configs_parse(name):
    path = Path(__file__).resolve().parent.parent / "configs" / name
    cfg = load_run_config(path)
    assert cfg.out_dir.startswith("runs/")
