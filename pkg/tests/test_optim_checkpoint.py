import math

import numpy as np
import pytest

from app.core.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from app.core.errors import CheckpointFormatError, NonFiniteGradientError
from app.core.optim import ParameterSet, adam_step, cosine_lr


def test_first_adam_step_moves_by_lr_times_sign():
    params = ParameterSet({"w": np.array([1.0, -2.0, 0.5])})
    adam_step(params, {"w": np.array([0.3, -4.0, 0.0])}, lr=0.1)
    # bias-corrected first step: m_hat / sqrt(v_hat) == sign(g)
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)
    assert params.state["w"].step == 1


def test_adam_zero_lr_leaves_values_untouched():
    params = ParameterSet({"w": np.arange(4.0)})
    adam_step(params, {"w": np.ones(4)}, lr=0.0)
    np.testing.assert_array_equal(params["w"], np.arange(4.0))


def test_non_finite_gradient_rejected_before_any_update():
    params = ParameterSet({"a": np.zeros(2), "b": np.zeros(2)})
    with pytest.raises(NonFiniteGradientError) as info:
        adam_step(params, {"a": np.ones(2), "b": np.array([np.nan, 1.0])}, lr=0.1)
    assert info.value.path == "b"
    np.testing.assert_array_equal(params["a"], np.zeros(2))


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx(1e-5 + 0.5 * (1e-3 - 1e-5))
    assert cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert cosine_lr(7, 0, 2e-3) == 2e-3
    with pytest.raises(ValueError):
        cosine_lr(0, 10, 1e-5, 1e-3)


def test_snapshot_is_read_only_copy():
    params = ParameterSet({"w": np.ones(3)})
    frozen = params.snapshot()
    params["w"][0] = 5.0
    assert frozen["w"][0] == 1.0
    with pytest.raises(ValueError):
        frozen["w"][0] = 2.0


def test_checkpoint_bytes_are_deterministic(tmp_path):
    values = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([math.pi])}
    first = save_checkpoint(tmp_path / "one.ckpt", values, "demo", {"n": 1})
    second = save_checkpoint(tmp_path / "two.ckpt", dict(reversed(list(values.items()))), "demo", {"n": 1})
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(MAGIC)

    params, meta = load_checkpoint(first, expected_kind="demo")
    assert meta == {"n": 1}
    np.testing.assert_array_equal(params["b"], values["b"])


def test_checkpoint_rejects_bad_magic_and_kind(tmp_path):
    blob = encode_checkpoint({"w": np.ones(2)}, "policy")
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"NOTACKPT" + blob[8:])
    path = tmp_path / "p.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path, expected_kind="tokenizer")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_checkpoint_refuses_non_finite_tensors():
    with pytest.raises(CheckpointFormatError):
        encode_checkpoint({"w": np.array([1.0, np.inf])}, "policy")


def test_loaded_parameters_are_writable(tmp_path):
    path = save_checkpoint(tmp_path / "w.ckpt", {"w": np.zeros(3)}, "demo")
    params, _ = load_checkpoint(path)
    adam_step(params, {"w": np.ones(3)}, lr=0.1)
    assert params["w"][0] == pytest.approx(-0.1)
