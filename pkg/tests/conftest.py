import pytest

from sociospec import corpus as cp
from sociospec.encoder import EncoderConfig, EncoderModel

TINY_GEN = cp.GeneratorConfig(
    n_languages=2, n_domains=1, filler_per_block=20, markers_per_group=4,
    marker_prob=(0.3, 0.0), min_len=6, max_len=12, seed=11,
)


@pytest.fixture(scope="session")
def tiny_gen():
    return TINY_GEN


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small planted-signal corpus shared by the slower module tests."""
    reviews, layout = cp.generate(TINY_GEN, 60)
    splits = cp.split(reviews, seed=12, specialization_fraction=0.5)
    return reviews, layout, splits


@pytest.fixture()
def tiny_encoder(tiny_corpus):
    _, layout, _ = tiny_corpus
    cfg = EncoderConfig(vocab_size=len(layout.vocab), max_len=16, d_model=16,
                        n_layers=1, n_heads=2, d_ff=32, dropout_prob=0.1, seed=13)
    return EncoderModel(cfg)
