"""Random generation of valid marked responses for round-trip tests.

"Valid" means: every sentence is a single segmenter-stable sentence
ending with terminal punctuation, sentence texts are unique, citation
indices are unique, sorted, and within the working-set size, and every
unsupported text is the text of exactly one (uncited) sentence.
"""

from __future__ import annotations

import random

from groundcite.markup import MarkedResponse, MarkedSentence

_WORDS = [
    "wave", "tide", "cliff", "island", "storm", "record", "basin", "ridge",
    "glacier", "harbor", "current", "valley", "summit", "plain", "reef",
    "lagoon", "strait", "canyon", "dune", "delta",
]


def random_marked_response(rng: random.Random, working_size: int | None = None) -> tuple[MarkedResponse, int]:
    """Build a random valid MarkedResponse; returns (response, working_size)."""
    if working_size is None:
        working_size = rng.randint(1, 6)
    n_sentences = rng.randint(1, 6)
    sentences: list[MarkedSentence] = []
    for i in range(n_sentences):
        words = rng.choices(_WORDS, k=rng.randint(3, 8))
        text = (" ".join(words) + f" item{i}").capitalize() + rng.choice([".", ".", ".", "?", "!"])
        if rng.random() < 0.6:
            n_cites = rng.randint(1, min(3, working_size))
            citations = sorted(rng.sample(range(1, working_size + 1), n_cites))
        else:
            citations = []
        sentences.append(MarkedSentence(text=text, citations=citations))
    uncited = [s for s in sentences if not s.citations]
    unsupported = [s.text for s in uncited if rng.random() < 0.7]
    return MarkedResponse(sentences=sentences, unsupported_texts=unsupported), working_size
