import os
import sys

import pytest
from hypothesis import strategies as st

from clozeforge.toylm import TableLM

STUB = os.path.join(os.path.dirname(__file__), "stub_backend.py")


def stub_spec(mode="ok"):
    return [sys.executable, STUB, mode]


TINY_CORPUS = [
    "the cat sat on the mat",
    "the dog sat on the rug",
    "the cat ate the fish",
    "a dog ate the bone",
    "the cat sat on the rug",
]


@pytest.fixture
def tiny_lm():
    return TableLM.from_text(TINY_CORPUS)


@pytest.fixture
def smooth_lm():
    return TableLM.from_text(TINY_CORPUS, alpha=0.5)


def random_table_lm(draw, max_vocab=6, max_len=4, max_sentences=8, alphas=(0.0, 0.5)):
    """Hypothesis helper: draw a small TableLM plus its raw corpus."""
    vocab = draw(st.integers(min_value=2, max_value=max_vocab))
    length = draw(st.integers(min_value=1, max_value=max_len))
    n = draw(st.integers(min_value=1, max_value=max_sentences))
    tokens = st.integers(min_value=0, max_value=vocab - 1)
    sentences = draw(
        st.lists(st.lists(tokens, min_size=length, max_size=length),
                 min_size=n, max_size=n)
    )
    alpha = draw(st.sampled_from(alphas))
    return TableLM(sentences, alpha=alpha, vocab=[f"w{i}" for i in range(vocab)]), sentences
