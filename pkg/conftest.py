"""
テスト共通のフィクスチャ
"""

import numpy as np
import pytest

from core.interfaces import ArchitectureSpec, ModelKind
from corpus.toy_grammar import generate_toy_corpus

# 数値勾配で確認できる程度の小さな次元
TINY_DIMS = dict(embed_dim=8, gru_hidden=6, gru_proj=8, heads=2, ffn_dim=12)
TINY_VOCAB = 11


def tiny_spec(kind: str, layers: int = 1, vocab_size: int = TINY_VOCAB, **overrides) -> ArchitectureSpec:
    dims = dict(TINY_DIMS)
    dims.update(overrides)
    return ArchitectureSpec(kind=ModelKind(kind), layers=layers, vocab_size=vocab_size, **dims)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gru_spec():
    return tiny_spec("gru")


@pytest.fixture
def transformer_spec():
    return tiny_spec("transformer")


@pytest.fixture(scope="session")
def toy_corpus():
    return generate_toy_corpus(seed=7, n_sentences=400, n_stimuli=12, max_len=20)
