import pytest
from fastapi.testclient import TestClient

from app.models.encoders import EncoderPair
from app.models.policy import PolicyModel
from app.models.vocabulary import Vocabulary
from app.schemas.corpus import CorpusSpec
from app.schemas.cot import CotConfig
from app.schemas.training import EncoderConfig, SamplingConfig, SftConfig, TokenizerConfig
from app.services.cot_engine import build_dataset
from app.services.encoder_service import train_contrastive
from app.services.mock_chat_server import create_mock_chat_app
from app.services.motion_data import generate_corpus
from app.services.policy_service import steps_text
from app.services.tokenizer_service import train_tokenizer
from app.utils.seeding import rng_for

# =============================================================================
# TINY CORPUS AND MODELS
# =============================================================================
TINY_FAMILIES = {"walk-straight": 4, "squat": 4, "jump": 4, "wave-arm": 4}


@pytest.fixture(scope="session")
def tiny_spec():
    """Four simple families with short clips"""
    return CorpusSpec(families=dict(TINY_FAMILIES), min_frames=16, max_frames=24, blend_overlap=4, seed=3)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_spec):
    return generate_corpus(tiny_spec)


@pytest.fixture(scope="session")
def tokenizer_config():
    return TokenizerConfig(codebook_size=8, code_dim=4, hidden=8, epochs=2, batch_size=8, reset_window=3)


@pytest.fixture(scope="session")
def tiny_tokenizer(tiny_corpus, tokenizer_config):
    return train_tokenizer(tiny_corpus, tokenizer_config, seed=0).tokenizer


@pytest.fixture(scope="session")
def encoder_config():
    return EncoderConfig(embed_dim=8, hidden=16, buckets=64, epochs=2, batch_size=8, retrieval_pool=8)


@pytest.fixture(scope="session")
def tiny_pair(tiny_corpus, encoder_config):
    enc = encoder_config
    pair = EncoderPair.create(tiny_corpus[0].motion.n_channels, enc.embed_dim, enc.hidden, enc.buckets, seed=0)
    train_contrastive(pair, tiny_corpus, tiny_corpus[:8], enc, seed=0)
    return pair


@pytest.fixture(scope="session")
def tiny_triplets(tiny_corpus, tiny_tokenizer):
    return build_dataset(tiny_corpus, tiny_tokenizer, CotConfig(), deterministic=True)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus, tiny_triplets, tiny_tokenizer):
    texts = [s.text for s in tiny_corpus] + [steps_text(t.cot_steps) for t in tiny_triplets]
    return Vocabulary.build(texts, tiny_tokenizer.codebook_size)


@pytest.fixture(scope="session")
def sft_config():
    return SftConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, context_length=64, epochs=1, batch_size=4)


@pytest.fixture
def tiny_policy(tiny_vocab, sft_config):
    """Fresh untrained policy; function scoped because training mutates it"""
    return PolicyModel.create(tiny_vocab.size, sft_config, rng_for(0, "policy-init"))


@pytest.fixture
def short_sampling():
    return SamplingConfig(max_new_tokens=12, top_k=8)


# =============================================================================
# MOCK CHAT BACKEND
# =============================================================================
@pytest.fixture
def chat_app():
    return create_mock_chat_app()


@pytest.fixture
def client(chat_app):
    """Test client bound to the mock chat-completion app"""
    with TestClient(chat_app) as test_client:
        yield test_client
