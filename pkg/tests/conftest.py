import numpy as np
import pytest

from denoiserforge import tokenizer as tk

TRAIN_TEXTS = [
    "the cat sat on the mat and the dog ran off",
    "a quick brown fox jumps over the lazy dog",
    "кошка спит на ковре а собака бежит по двору",
    "numbers 123 and punctuation, marks! appear? here.",
]


@pytest.fixture(scope="session")
def bbpe_vocab() -> tk.Vocab:
    return tk.train_vocab(
        TRAIN_TEXTS, "bbpe", 256 + 40 + len(tk.default_specials())
    )


@pytest.fixture(scope="session")
def natural_ids(bbpe_vocab) -> list[int]:
    return bbpe_vocab.natural_ids()


def random_token_seq(vocab, length, seed):
    rng = np.random.default_rng(seed)
    naturals = vocab.natural_ids()
    ids = [int(naturals[i]) for i in rng.integers(0, len(naturals), length)]
    return tk.TokenSeq(ids, vocab.vocab_id)
