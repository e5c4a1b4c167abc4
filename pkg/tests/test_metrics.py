import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.errors import InsufficientSamplesError
from app.models.motion import MotionSequence
from app.services.metrics import (
    confidence_interval, diversity, fid, mm_dist, mmodality, r_precision, r_precision_curve, retrieval_ranks,
)


@pytest.fixture
def features():
    return np.random.default_rng(0).standard_normal((400, 3))


def test_fid_of_identical_sets_is_zero(features):
    assert fid(features, features) == pytest.approx(0.0, abs=1e-8)


def test_fid_of_shifted_set_is_squared_shift(features):
    shift = np.array([1.0, -2.0, 0.5])
    assert fid(features, features + shift) == pytest.approx(float(shift @ shift), rel=1e-8)


def test_fid_of_scaled_set(features):
    sigma = np.cov(features, rowvar=False)
    mu = features.mean(axis=0)
    # |mu - 2mu|^2 + tr(S) + tr(4S) - 2 tr(2S)
    expected = float(mu @ mu + np.trace(sigma))
    assert fid(features, 2.0 * features) == pytest.approx(expected, rel=1e-6)


def test_fid_is_symmetric(features):
    other = np.random.default_rng(1).standard_normal((300, 3)) * 1.5 + 0.2
    assert fid(features, other) == pytest.approx(fid(other, features), rel=1e-6)


def test_fid_needs_more_rows_than_dimensions():
    with pytest.raises(InsufficientSamplesError):
        fid(np.ones((3, 3)), np.ones((10, 3)))
    with pytest.raises(ValueError):
        fid(np.ones((10, 3)), np.ones((10, 2)))


def test_fid_accepts_one_dimensional_features():
    a = np.arange(10.0)
    assert fid(a, a + 3.0) == pytest.approx(9.0)


def test_fid_of_unit_gaussians_one_apart():
    rng = np.random.default_rng(0)
    real = rng.standard_normal(100_000)
    gen = rng.standard_normal(100_000) + 1.0
    assert fid(real, gen) == pytest.approx(1.0, rel=0.05)


def test_fid_of_gaussians_with_known_moments():
    rng = np.random.default_rng(1)
    mu = np.array([1.0, 0.0, 0.0, 0.5])
    sigma = np.array([1.0, 2.0, 0.5, 1.0])
    real = rng.standard_normal((10_000, 4))
    gen = mu + sigma * rng.standard_normal((10_000, 4))
    # |mu|^2 + sum (1 - sigma)^2 for a standard normal against N(mu, diag(sigma^2))
    expected = float(mu @ mu + np.sum((1.0 - sigma) ** 2))
    assert fid(real, gen) == pytest.approx(expected, rel=0.05)


def test_fid_is_rotation_invariant(features):
    rng = np.random.default_rng(5)
    rotation, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    other = features * np.array([1.5, 0.7, 1.0]) + np.array([0.3, -0.2, 0.1])
    assert fid(features @ rotation, other @ rotation) == pytest.approx(fid(features, other), abs=1e-6)


def test_r_precision_of_matching_embeddings_is_one():
    emb = np.eye(32)
    assert r_precision(emb, emb, k=1, pool=32) == 1.0
    assert r_precision_curve(emb, emb, (1, 2, 3), pool=32) == {1: 1.0, 2: 1.0, 3: 1.0}


def test_r_precision_is_seeded_and_monotone_in_k():
    rng = np.random.default_rng(3)
    text, motion = rng.standard_normal((40, 4)), rng.standard_normal((40, 4))
    curve = r_precision_curve(text, motion, (1, 2, 3), pool=32, seed=9)
    assert curve == r_precision_curve(text, motion, (1, 2, 3), pool=32, seed=9)
    assert curve[1] <= curve[2] <= curve[3]
    ranks = retrieval_ranks(text, motion, pool=32, seed=9)
    assert ranks.min() >= 1 and ranks.max() <= 32


def test_r_precision_of_random_embeddings_is_chance():
    rng = np.random.default_rng(8)
    text, motion = rng.standard_normal((1000, 8)), rng.standard_normal((1000, 8))
    curve = r_precision_curve(text, motion, (1, 2, 3), pool=32, seed=0)
    for k, value in curve.items():
        assert abs(value - k / 32) <= 0.05


def test_r_precision_needs_full_pool():
    with pytest.raises(InsufficientSamplesError):
        r_precision(np.eye(8), np.eye(8), pool=32)


def test_exhaustive_diversity():
    feats = np.array([[0.0], [1.0], [3.0]])
    assert diversity(feats, exhaustive=True) == pytest.approx(2.0)
    assert diversity(np.array([[0.0], [1.0]]), s_dis=50) == pytest.approx(1.0)
    with pytest.raises(InsufficientSamplesError):
        diversity(np.zeros((1, 2)))


def test_mm_dist_modes():
    text = np.array([[1.0, 0.0], [0.0, 1.0]])
    motion = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert mm_dist(text, text) == 0.0
    assert mm_dist(text, motion) == pytest.approx(np.sqrt(2.0) / 2.0)
    assert mm_dist(text, motion, mode="cosine") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        mm_dist(text, motion, mode="manhattan")


def test_mmodality_of_constant_generator_is_zero(tiny_pair):
    motion = MotionSequence(np.random.default_rng(0).standard_normal((16, 12)))

    def generator(text, n, seed):
        return [motion] * n

    assert mmodality(generator, ["a person jumps", "someone squats"], 4, 3, tiny_pair) == pytest.approx(0.0)


def test_mmodality_treats_failures_as_zero_embeddings(tiny_pair):
    motion = MotionSequence(np.random.default_rng(0).standard_normal((16, 12)))

    def generator(text, n, seed):
        return [motion, None]

    # one unit-norm embedding against a zero vector
    assert mmodality(generator, ["a person jumps"], 2, 5, tiny_pair) == pytest.approx(1.0)


def test_confidence_interval_uses_population_std():
    mean, half = confidence_interval([1.0, 3.0])
    assert mean == 2.0
    assert half == pytest.approx(1.96 / np.sqrt(2.0))
    with pytest.raises(InsufficientSamplesError):
        confidence_interval([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=20))
def test_confidence_interval_is_non_negative(values):
    mean, half = confidence_interval(values)
    assert half >= 0.0
    assert min(values) - 1e-9 <= mean <= max(values) + 1e-9
