"""Synthetic corpora for simulations.

A mixed corpus interleaves real dictionary words (left unannotated) with
uniformly random strings of the same lengths (annotated as ``RANDOM`` and so
counted as sensitive). Under the mock restorer the random strings are
recovered only when k-RR happens to leave them untouched, which is exactly
the chance baseline.
"""

from __future__ import annotations

import numpy as np

from .restoration import default_dictionary_path, load_dictionary
from .text import DEFAULT_ALPHABET, AnnotatedDocument, CharAlphabet, EntityAnnotation

RANDOM_CATEGORY = "RANDOM"


def random_string(length: int, rng: np.random.Generator, alphabet: CharAlphabet = DEFAULT_ALPHABET) -> str:
    return "".join(alphabet[i] for i in rng.integers(0, alphabet.k, size=length))


def mixed_corpus(n_words: int, rng: np.random.Generator, min_length: int = 8, max_length: int = 14,
                 words_per_doc: int = 10, dictionary: list[str] | None = None,
                 alphabet: CharAlphabet = DEFAULT_ALPHABET) -> list[AnnotatedDocument]:
    """``n_words`` distinct dictionary words plus ``n_words`` length-matched random strings.

    The default lengths keep random strings far (in Hamming distance) from
    every dictionary word, so the mock restorer leaves them alone.
    """
    words = dictionary if dictionary is not None else load_dictionary(default_dictionary_path())
    pool = [w for w in words if min_length <= len(w) <= max_length]
    if len(pool) < n_words:
        raise ValueError(f"only {len(pool)} dictionary words with length in [{min_length}, {max_length}]")
    chosen = [pool[i] for i in rng.choice(len(pool), size=n_words, replace=False)]
    randoms = [random_string(len(w), rng, alphabet) for w in chosen]

    docs = []
    for d, start in enumerate(range(0, n_words, words_per_doc)):
        real = chosen[start:start + words_per_doc]
        fake = randoms[start:start + words_per_doc]
        tokens = []
        for a, b in zip(real, fake):
            tokens += [a, b]
        doc_id = f"synthetic-{d:05d}"
        entities = [EntityAnnotation((2 * j + 1,), RANDOM_CATEGORY, f"{doc_id}:{j}") for j in range(len(fake))]
        base = AnnotatedDocument.from_text(doc_id, " ".join(tokens))
        docs.append(AnnotatedDocument(base.id, base.raw_text, base.tokens, tuple(entities), base.gaps))
    return docs


def fixed_length_corpus(length: int, n_words: int, rng: np.random.Generator,
                        alphabet: CharAlphabet = DEFAULT_ALPHABET) -> list[AnnotatedDocument]:
    """One document of ``n_words`` random strings, all of ``length`` characters."""
    text = " ".join(random_string(length, rng, alphabet) for _ in range(n_words))
    return [AnnotatedDocument.from_text(f"fixed-{length}", text)]
