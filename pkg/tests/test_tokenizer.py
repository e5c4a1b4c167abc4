import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.autodiff import Tape, forward, grad_check
from app.core.errors import AssignmentMismatchError, InvalidTokenError, QuantizationError
from app.models.codebook import Codebook, ema_update, reset_dead_codes
from app.models.motion import MotionSequence
from app.models.vqvae import MotionTokenizer, decoder_graph, encoder_graph
from app.schemas.training import TokenizerConfig
from app.services.tokenizer_service import (
    TokenizerBatch, codebook_usage, evaluate_reconstruction, smooth_l1, tokenizer_loss_graph, train_tokenizer,
    vq_loss,
)


def _codebook(codes):
    codes = np.asarray(codes, dtype=float)
    return Codebook(codes=codes.copy(), ema_counts=np.ones(len(codes)), ema_sums=codes.copy())


def test_nearest_code_ties_go_to_lowest_index():
    cb = _codebook([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]])
    indices, dist = cb.nearest(np.array([[0.0, 0.0], [0.9, 0.1]]))
    assert indices.tolist() == [0, 0]
    assert dist[0] == pytest.approx(1.0)


def test_quantize_rejects_nan_latents():
    cb = _codebook([[0.0], [1.0]])
    with pytest.raises(QuantizationError):
        cb.quantize(np.array([[np.nan]]))


def test_quantize_matches_brute_force_search():
    rng = np.random.default_rng(0)
    cb = Codebook.create(64, 8, rng)
    z = rng.standard_normal((1000, 8)) * 0.1
    indices, zq = cb.quantize(z)
    for row, latent in enumerate(z):
        best, best_dist = 0, np.inf
        for code in range(cb.size):
            dist = float(np.sum((latent - cb.codes[code]) ** 2))
            if dist < best_dist:
                best, best_dist = code, dist
        assert indices[row] == best
    np.testing.assert_array_equal(zq, cb.codes[indices])


def test_codebook_perplexity():
    cb = _codebook(np.eye(4))
    assert cb.perplexity(np.array([0, 1, 2, 3] * 5)) == pytest.approx(4.0, rel=1e-5)
    assert cb.perplexity(np.array([2] * 7)) == pytest.approx(1.0, rel=1e-5)


def test_ema_update_moves_codes_toward_assigned_means():
    cb = _codebook([[0.0, 0.0], [10.0, 10.0]])
    cb.decay = 0.5
    z = np.array([[2.0, 2.0], [4.0, 4.0]])
    ema_update(cb, z, np.array([0, 0]))
    # counts 0.5 + 0.5 * 2, sums 0.5 * 0 + 0.5 * 6
    np.testing.assert_allclose(cb.codes[0], [2.0, 2.0])
    np.testing.assert_allclose(cb.codes[1], [10.0, 10.0])
    assert cb.usage.tolist() == [2, 0]


def test_ema_converges_geometrically_to_repeated_latent():
    cb = _codebook([[0.0, 0.0], [10.0, 10.0]])
    cb.decay = 0.9
    v = np.array([[3.0, -1.0]])
    gaps = []
    for _ in range(50):
        ema_update(cb, v, np.array([0]))
        gaps.append(np.linalg.norm(cb.codes[0] - v[0]))
    # count stays at 1, so the code is decay**t * c0 + (1 - decay**t) * v
    np.testing.assert_allclose(cb.codes[0], (1.0 - 0.9 ** 50) * v[0])
    np.testing.assert_allclose(np.array(gaps[1:]) / np.array(gaps[:-1]), 0.9)
    np.testing.assert_allclose(cb.codes[1], [10.0, 10.0])


def test_ema_update_checks_assignment_length():
    cb = _codebook([[0.0], [1.0]])
    with pytest.raises(AssignmentMismatchError):
        ema_update(cb, np.zeros((3, 1)), np.array([0, 1]))


def test_dead_codes_reset_to_batch_latents():
    cb = _codebook([[0.0], [1.0], [2.0]])
    cb.usage[:] = [10, 0, 0]
    z = np.array([[7.0], [8.0]])
    _, n_reset = reset_dead_codes(cb, z, usage_threshold=0.1, rng=np.random.default_rng(0))
    assert n_reset == 2
    assert set(cb.codes[1:, 0]) <= {7.0, 8.0}
    assert cb.codes[0, 0] == 0.0
    assert cb.usage.sum() == 0


def test_encode_downsamples_by_four_with_padding(tiny_tokenizer):
    motion = MotionSequence(np.zeros((18, 12)))
    latents = tiny_tokenizer.encode(motion)
    assert latents.latents.shape == (5, tiny_tokenizer.code_dim)
    assert latents.pad == 2
    tokens = tiny_tokenizer.tokenize(motion)
    assert len(tokens) == 5
    assert all(0 <= t < tiny_tokenizer.codebook_size for t in tokens)
    assert tiny_tokenizer.reconstruct(motion).n_frames == 18


def test_decode_rejects_out_of_range_token(tiny_tokenizer):
    with pytest.raises(InvalidTokenError) as info:
        tiny_tokenizer.decode([0, tiny_tokenizer.codebook_size])
    assert info.value.position == 1
    assert tiny_tokenizer.decode([0, 1]).n_frames == 8


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50, allow_nan=False))
def test_smooth_l1_is_quadratic_then_linear(x):
    value = float(smooth_l1(np.array(x)))
    expected = 0.5 * x * x if abs(x) < 1.0 else abs(x) - 0.5
    assert value == pytest.approx(expected)
    assert 0.0 <= value <= min(0.5 * x * x, abs(x)) + 1e-12


def test_smooth_l1_on_tape_matches_numpy():
    x = np.array([-3.0, -1.0, -0.4, 0.0, 0.7, 1.0, 2.5])
    tape = Tape(None, record=False)
    np.testing.assert_allclose(tape.smooth_l1(tape.constant(x)).value, smooth_l1(x))


def test_vq_loss_is_zero_for_perfect_reconstruction():
    m = MotionSequence(np.random.default_rng(0).standard_normal((8, 12)))
    z = np.ones((2, 4))
    breakdown = vq_loss(m, m, z, z)
    assert breakdown.total == 0.0


def test_vq_loss_commit_term():
    m = MotionSequence(np.zeros((8, 12)))
    breakdown = vq_loss(m, m, np.zeros((2, 2)), np.ones((2, 2)), commit_weight=0.25)
    assert breakdown.commit == pytest.approx(1.0)
    assert breakdown.total == pytest.approx(0.25 + 1.0)


def test_zero_learning_rate_freezes_tokenizer(tiny_corpus):
    cfg = TokenizerConfig(codebook_size=8, code_dim=4, hidden=8, epochs=2, batch_size=8, lr=0.0, lr_min=0.0)
    result = train_tokenizer(tiny_corpus, cfg, seed=5)
    fresh = MotionTokenizer.create(12, 8, 8, 4, np.random.default_rng(5))
    for name in fresh.params:
        np.testing.assert_array_equal(result.tokenizer.params[name], fresh.params[name])
    assert result.resets == 0


def test_training_reports_history_and_usage(tiny_corpus, tiny_tokenizer, tokenizer_config):
    result = train_tokenizer(tiny_corpus, tokenizer_config, seed=0)
    assert len(result.history) == tokenizer_config.epochs
    assert all(np.isfinite(h.total) for h in result.history)
    breakdown = evaluate_reconstruction(tiny_tokenizer, tiny_corpus, tokenizer_config)
    assert breakdown.reconstruct >= 0.0
    assert 0.0 < codebook_usage(tiny_tokenizer, tiny_corpus) <= 1.0


def test_saved_tokenizer_gives_identical_tokens(tmp_path, tiny_tokenizer, tiny_corpus):
    path = tiny_tokenizer.save(tmp_path / "tok.ckpt")
    loaded = MotionTokenizer.load(path)
    motion = tiny_corpus[0].motion
    assert loaded.tokenize(motion) == tiny_tokenizer.tokenize(motion)
    np.testing.assert_array_equal(loaded.decode([1, 2]).frames, tiny_tokenizer.decode([1, 2]).frames)


def test_velocity_pairs_skip_padding():
    short = MotionSequence(np.arange(60.0).reshape(5, 12))
    full = MotionSequence(np.ones((8, 12)))
    batch = TokenizerBatch.build([short, full])
    assert batch.frames.shape == (16, 12)
    # frames 5..7 repeat the short clip's last frame
    assert batch.vel_index.tolist() == [0, 1, 2, 3, 8, 9, 10, 11, 12, 13, 14]
    np.testing.assert_array_equal(batch.velocity[:4], short.velocity())
    np.testing.assert_array_equal(batch.velocity, batch.frames[batch.vel_index + 1] - batch.frames[batch.vel_index])


def test_single_frame_batch_has_no_velocity_term(tiny_tokenizer, tokenizer_config, caplog):
    batch = TokenizerBatch.build([MotionSequence(np.ones((1, 12)))])
    assert batch.vel_index.size == 0
    stash: dict = {}
    with caplog.at_level(logging.WARNING):
        _, loss = forward(tokenizer_loss_graph, tiny_tokenizer.params, batch, tiny_tokenizer, tokenizer_config, stash,
                          record=False)
    assert np.isfinite(loss.value)
    assert stash["parts"][1] == 0.0
    assert stash["counts"][1] == 0
    assert "velocity term disabled" in caplog.text


def _frozen_assignment_loss(tape, batch, offset, zq, cfg):
    """Tokenizer loss with the quantizer replaced by a fixed shift of the latents."""
    x = tape.constant(batch.frames)
    z = encoder_graph(tape, x)
    recon = decoder_graph(tape, z + tape.constant(offset))
    rec = tape.mean(tape.smooth_l1(recon - x))
    idx = batch.vel_index
    vel_hat = tape.embedding(recon, idx + 1) - tape.embedding(recon, idx)
    vel_loss = tape.mean(tape.smooth_l1(vel_hat - tape.constant(batch.velocity)))
    commit = tape.mean(tape.square(z - tape.constant(zq)))
    return rec + vel_loss * cfg.velocity_weight + commit * cfg.commit_weight


def test_straight_through_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    cfg = TokenizerConfig(codebook_size=8, code_dim=2, hidden=4)
    tokenizer = MotionTokenizer.create(12, cfg.hidden, cfg.codebook_size, cfg.code_dim, rng)
    batch = TokenizerBatch.build([MotionSequence(rng.standard_normal((8, 12)) * 0.5)])
    tape = Tape(tokenizer.params, record=False)
    z0 = encoder_graph(tape, tape.constant(batch.frames)).value
    _, zq0 = tokenizer.codebook.quantize(z0)

    stash: dict = {}
    st_tape, _ = forward(tokenizer_loss_graph, tokenizer.params, batch, tokenizer, cfg, stash)
    st_grads = st_tape.backward()
    frozen_tape, _ = forward(_frozen_assignment_loss, tokenizer.params, batch, zq0 - z0, zq0, cfg)
    frozen_grads = frozen_tape.backward()
    for name in tokenizer.params:
        np.testing.assert_allclose(st_grads[name], frozen_grads[name], rtol=1e-10, atol=1e-12)

    report = grad_check(_frozen_assignment_loss, tokenizer.params, batch, zq0 - z0, zq0, cfg)
    assert report.passed, report.flagged


def test_frozen_history_is_constant_with_uneven_last_batch(tiny_corpus):
    # 16 clips in batches of 5, 5, 5, 1, reshuffled every epoch
    cfg = TokenizerConfig(codebook_size=8, code_dim=4, hidden=8, epochs=3, batch_size=5, lr=0.0, lr_min=0.0)
    samples = tiny_corpus[:16]
    result = train_tokenizer(samples, cfg, seed=5)
    first = result.history[0]
    for later in result.history[1:]:
        assert later.total == pytest.approx(first.total, rel=1e-9)
        assert later.reconstruct == pytest.approx(first.reconstruct, rel=1e-9)
        assert later.commit == pytest.approx(first.commit, rel=1e-9)
    whole = evaluate_reconstruction(result.tokenizer, samples, cfg.model_copy(update={"batch_size": 16}))
    assert whole.total == pytest.approx(first.total, rel=1e-9)


def test_training_records_codebook_perplexity(tiny_corpus, tokenizer_config):
    result = train_tokenizer(tiny_corpus, tokenizer_config, seed=0)
    assert len(result.perplexity) == tokenizer_config.epochs
    assert all(1.0 - 1e-6 <= p <= tokenizer_config.codebook_size + 1e-6 for p in result.perplexity)
