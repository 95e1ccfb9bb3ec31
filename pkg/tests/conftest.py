from __future__ import annotations

import pytest

from callprep.corpus import Transcript, parse_transcript
from callprep.generator import (
    RESERVED_TOKENS,
    GeneratorConfig,
    GeneratorState,
    Vocab,
    init_generator,
)

RAW_FIXTURE = """\
company: Initech
date: 2023-05-04

== PRESENTATION ==
Revenue grew by eight percent this quarter. Margins improved across the board.

We expect continued momentum into the second half.
== QA ==
-- Pat Lee (Analyst) --
How is margin trending this quarter?

-- Casey Fox (Manager) --
Margins should hold near current levels.

-- Robin Ward (Analyst) --
What is the outlook for capital spending?
"""


def make_vocab(extra_tokens: int = 11) -> Vocab:
    """Vocabulary with the five reserved ids plus t0..t<n-1>."""
    tokens = list(RESERVED_TOKENS) + [f"t{i}" for i in range(extra_tokens)]
    return Vocab(tokens, {t: i for i, t in enumerate(tokens)})


def make_tiny_state(
    d_model: int = 8,
    vocab_size: int = 16,
    n_layers: int = 1,
    n_heads: int = 2,
    context_len: int = 64,
    seed: int = 3,
    init_scale: float = 0.3,
) -> GeneratorState:
    vocab = make_vocab(vocab_size - len(RESERVED_TOKENS))
    config = GeneratorConfig(
        vocab_size=vocab_size,
        d_model=d_model,
        n_layers=n_layers,
        n_heads=n_heads,
        context_len=context_len,
    )
    return init_generator(config, vocab, seed=seed, init_scale=init_scale)


@pytest.fixture
def fixture_transcript() -> Transcript:
    return parse_transcript(RAW_FIXTURE, id="tr-0001")


@pytest.fixture
def tiny_state() -> GeneratorState:
    return make_tiny_state()
