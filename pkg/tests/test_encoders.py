import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from app.core.errors import EmptyTextError, InsufficientSamplesError
from app.models.encoders import (
    EncoderPair, cosine, embed_motion, embed_text, motion_features, text_features, word_bucket,
)
from app.models.motion import MotionSequence
from app.schemas.corpus import CorpusSpec
from app.schemas.training import EncoderConfig
from app.services.encoder_service import retrieval_accuracy, train_contrastive
from app.services.motion_data import generate_corpus

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


@pytest.fixture(scope="module")
def corpus():
    spec = CorpusSpec(families={"walk-straight": 8, "squat": 8, "jump": 8, "wave-arm": 8},
                      min_frames=16, max_frames=24, seed=11)
    return generate_corpus(spec)


# =============================================================================
# TEXT FEATURES
# =============================================================================
def test_word_bucket_is_stable_and_in_range():
    assert word_bucket("jump", 64) == word_bucket("jump", 64)
    assert all(0 <= word_bucket(w, 7) < 7 for w in ("a", "person", "walks", "in", "circles"))


def test_text_features_count_normalized_words():
    bow = text_features("The person JUMPS, the person lands.", 64)
    assert bow.sum() == 6
    assert bow[word_bucket("person", 64)] >= 2
    np.testing.assert_array_equal(bow, text_features("the person jumps the person lands", 64))


def test_text_embedding_ignores_word_order(tiny_pair):
    np.testing.assert_allclose(embed_text("a person jumps twice", tiny_pair),
                               embed_text("twice jumps person a", tiny_pair), atol=1e-12)


def test_empty_text_is_rejected(tiny_pair):
    with pytest.raises(EmptyTextError):
        text_features(" ,.! ", 64)
    with pytest.raises(EmptyTextError):
        embed_text("", tiny_pair)


def test_embeddings_have_unit_norm(tiny_pair, tiny_corpus):
    assert np.linalg.norm(embed_text(tiny_corpus[0].text, tiny_pair)) == pytest.approx(1.0)
    assert np.linalg.norm(embed_motion(tiny_corpus[0].motion, tiny_pair)) == pytest.approx(1.0)


# =============================================================================
# MOTION FEATURES
# =============================================================================
def test_motion_features_layout():
    frames = np.zeros((5, 12))
    frames[:, 0] = np.arange(5.0)
    feats = motion_features(MotionSequence(frames))
    assert feats.shape == (36,)
    assert feats[0] == pytest.approx(2.0)
    assert feats[24] == pytest.approx(1.0)
    assert feats[25:].sum() == 0.0


def test_single_frame_motion_has_zero_velocity_features(caplog):
    with caplog.at_level(logging.WARNING):
        feats = motion_features(MotionSequence(np.ones((1, 12))))
    assert feats[24:].sum() == 0.0
    assert "velocity statistics set to zero" in caplog.text


# =============================================================================
# COSINE
# =============================================================================
@settings(max_examples=80, deadline=None)
@given(vectors, vectors)
def test_cosine_is_bounded(a, b):
    assume(np.linalg.norm(a) > 1e-6 and np.linalg.norm(b) > 1e-6)
    assert -1.0 <= cosine(a, b) <= 1.0


@settings(max_examples=80, deadline=None)
@given(vectors, vectors, st.floats(1e-3, 1e3))
def test_cosine_is_scale_invariant(a, b, scale):
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3)
    assert cosine(scale * a, b) == pytest.approx(cosine(a, b), abs=1e-9)


def test_cosine_known_values():
    assert cosine([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert cosine([1.0, 0.0], [-3.0, 0.0]) == pytest.approx(-1.0)
    assert cosine([1.0, 0.0], [0.0, 5.0]) == pytest.approx(0.0)


def test_cosine_with_zero_vector_is_zero_and_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert cosine(np.zeros(3), np.ones(3)) == 0.0
    assert "zero vector" in caplog.text


# =============================================================================
# CONTRASTIVE TRAINING
# =============================================================================
def test_contrastive_training_lowers_loss_and_improves_retrieval(corpus):
    cfg = EncoderConfig(embed_dim=16, hidden=32, buckets=128, epochs=40, batch_size=8, retrieval_pool=16)
    pair = EncoderPair.create(12, cfg.embed_dim, cfg.hidden, cfg.buckets, seed=0)
    pair.fit_feature_stats([s.motion for s in corpus])
    before = retrieval_accuracy(pair, corpus, pool=16, seed=3)
    result = train_contrastive(pair, corpus, corpus, cfg, seed=0)
    assert len(result.loss_history) == cfg.epochs
    assert result.loss_history[-1] < result.loss_history[0]
    after = retrieval_accuracy(result.pair, corpus, pool=16, seed=3)
    assert after > before
    assert after > 1 / 16


def test_contrastive_training_needs_two_families(tiny_corpus, encoder_config):
    one_family = [s for s in tiny_corpus if s.family == "squat"]
    pair = EncoderPair.create(12, encoder_config.embed_dim, encoder_config.hidden, encoder_config.buckets, seed=0)
    with pytest.raises(InsufficientSamplesError):
        train_contrastive(pair, one_family, one_family, encoder_config)


# =============================================================================
# PERSISTENCE
# =============================================================================
def test_saved_pair_gives_identical_embeddings(tmp_path, tiny_pair, tiny_corpus):
    loaded = EncoderPair.load(tiny_pair.save(tmp_path / "enc.ckpt"))
    sample = tiny_corpus[2]
    np.testing.assert_array_equal(loaded.embed_motion(sample.motion), tiny_pair.embed_motion(sample.motion))
    np.testing.assert_array_equal(loaded.embed_text(sample.text), tiny_pair.embed_text(sample.text))


def test_frozen_pair_cannot_be_updated(tiny_pair):
    frozen = tiny_pair.frozen()
    with pytest.raises(ValueError):
        frozen.params["text.b1"][0] = 1.0
