"""Character-level k-ary randomized response.

Each character is kept with probability ``1 - gamma`` and otherwise replaced
by one of the other ``k - 1`` alphabet characters, uniformly, where
``gamma = (k - 1) / (k - 1 + e**epsilon)``. A single character release is
``epsilon``-DP; a word of length ``n`` is ``n * epsilon``-DP by composition.

Randomness comes from numpy's PCG64. Every document gets its own substream
seeded by ``SeedSequence(seed, spawn_key=sha256(doc_id))``, so results do not
depend on the order in which documents are processed.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass, field

import numpy as np

from .errors import AlphabetError, ParameterError
from .text import DEFAULT_ALPHABET, AnnotatedDocument, CharAlphabet, Token, detokenize, retokenize_like, split_layout

# Above this epsilon, e**epsilon is large enough that the direct formula loses precision.
_STABLE_EPSILON = 40.0


def gamma_from_epsilon(epsilon: float, k: int) -> float:
    """Replacement probability ``(k-1) / (k-1 + e^epsilon)``."""
    if k < 2:
        raise ParameterError(f"alphabet size must be at least 2, got {k}")
    if not epsilon >= 0:
        raise ParameterError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon > _STABLE_EPSILON:
        t = (k - 1) * math.exp(-epsilon)
        return t / (t + 1.0)
    return (k - 1) / (k - 1 + math.exp(epsilon))


@dataclass(frozen=True)
class PerturbationParams:
    """Privacy budget per character, alphabet size and RNG seed.

    ``gamma`` is always derived from ``epsilon`` and ``k``. When ``seed`` is
    omitted a fresh 64-bit seed is drawn so it can be recorded.
    """

    epsilon: float
    k: int = DEFAULT_ALPHABET.k
    seed: int | None = None
    gamma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma", gamma_from_epsilon(self.epsilon, self.k))
        if self.seed is None:
            object.__setattr__(self, "seed", secrets.randbits(64))
        elif not 0 <= int(self.seed) < 2**64:
            raise ParameterError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        else:
            object.__setattr__(self, "seed", int(self.seed))

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "gamma": self.gamma, "k": self.k, "seed": self.seed}


def document_rng(seed: int, doc_id: str) -> np.random.Generator:
    """Independent generator for one document, derived from ``(seed, doc_id)``."""
    digest = hashlib.sha256(doc_id.encode("utf-8")).digest()
    spawn_key = tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def perturb_indices(indices, gamma: float, k: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Apply k-RR to an array of alphabet indices.

    Returns the output indices and a boolean array marking replaced positions.
    A replacement is drawn from ``0..k-2`` and shifted up by one when it reaches
    the input index, which yields a uniform draw over the other ``k - 1`` symbols.
    """
    indices = np.asarray(indices, dtype=np.int64)
    flipped = rng.random(indices.shape) < gamma
    r = rng.integers(0, k - 1, size=indices.shape)
    replacement = r + (r >= indices)
    return np.where(flipped, replacement, indices), flipped


def _check_alphabet(params, alphabet):
    if alphabet.k != params.k:
        raise ParameterError(f"params were built for k={params.k} but the alphabet has {alphabet.k} characters")


def perturb_char(c: str, params: PerturbationParams, rng, alphabet: CharAlphabet = DEFAULT_ALPHABET,
                 strict: bool = False) -> str:
    _check_alphabet(params, alphabet)
    if c not in alphabet:
        if strict:
            raise AlphabetError(f"character {c!r} is not in the alphabet")
        return c
    out, _ = perturb_indices(np.array([alphabet.index(c)]), params.gamma, params.k, rng)
    return alphabet[int(out[0])]


def _perturb_string(text, params, rng, alphabet, strict):
    idx = np.fromiter((alphabet.get_index(c) for c in text), dtype=np.int64, count=len(text))
    mask = idx >= 0
    if strict and not mask.all():
        bad = text[int(np.argmin(mask))]
        raise AlphabetError(f"character {bad!r} is not in the alphabet")
    out, flipped = perturb_indices(idx[mask], params.gamma, params.k, rng)
    chars = list(text)
    for pos, j in zip(np.flatnonzero(mask), out):
        chars[pos] = alphabet.characters[j]
    flips = np.zeros(len(text), dtype=bool)
    flips[mask] = flipped
    return "".join(chars), flips, int((~mask).sum())


def perturb_word(w: Token | str, params: PerturbationParams, rng, alphabet: CharAlphabet = DEFAULT_ALPHABET,
                 strict: bool = False) -> Token | str:
    """Perturb every character of ``w`` independently; length is preserved."""
    _check_alphabet(params, alphabet)
    text = w if isinstance(w, str) else w.text
    out, _, _ = _perturb_string(text, params, rng, alphabet, strict)
    return out if isinstance(w, str) else Token(out, w.start_offset)


@dataclass(frozen=True)
class PerturbedDocument:
    source_id: str
    perturbed_tokens: tuple[Token, ...]
    params: PerturbationParams
    gaps: tuple[str, ...]
    flip_log: tuple[tuple[bool, ...], ...] | None = None
    passthrough_chars: int = 0

    @property
    def perturbed_text(self) -> str:
        return detokenize(self.perturbed_tokens, self.gaps)

    def to_json(self, entities=None) -> dict:
        """Record for a perturbed JSONL file. The flip log is never serialized."""
        out = {"id": self.source_id, "perturbed_text": self.perturbed_text}
        if entities is not None:
            out["entities"] = entities
        return out

    @classmethod
    def from_text(cls, source_id: str, perturbed_text: str, params: PerturbationParams) -> "PerturbedDocument":
        """Rebuild a document read back from a perturbed JSONL file."""
        tokens, gaps = split_layout(perturbed_text)
        return cls(source_id, tuple(tokens), params, tuple(gaps))


def perturb_document(doc: AnnotatedDocument, params: PerturbationParams, alphabet: CharAlphabet = DEFAULT_ALPHABET,
                     strict: bool = False, keep_flip_log: bool = False) -> PerturbedDocument:
    """Perturb every token of ``doc`` using the document's own RNG substream."""
    _check_alphabet(params, alphabet)
    rng = document_rng(params.seed, doc.id)
    joined = "".join(t.text for t in doc.tokens)
    out, flips, passthrough = _perturb_string(joined, params, rng, alphabet, strict)
    texts, logs, pos = [], [], 0
    for tok in doc.tokens:
        texts.append(out[pos:pos + tok.length])
        logs.append(tuple(bool(b) for b in flips[pos:pos + tok.length]))
        pos += tok.length
    return PerturbedDocument(
        source_id=doc.id,
        perturbed_tokens=tuple(retokenize_like(texts, doc.gaps)),
        params=params,
        gaps=doc.gaps,
        flip_log=tuple(logs) if keep_flip_log else None,
        passthrough_chars=passthrough,
    )


def output_distribution(params: PerturbationParams) -> np.ndarray:
    """Closed-form channel ``P[x, y] = Pr[M(x) = y]`` for one character."""
    k, g = params.k, params.gamma
    P = np.full((k, k), g / (k - 1))
    np.fill_diagonal(P, 1.0 - g)
    return P


@dataclass(frozen=True)
class DPRatioReport:
    epsilon: float
    k: int
    max_ratio: float
    target: float
    relative_error: float
    worst_case: tuple[int, int, int]  # (x, x', y)

    @property
    def ok(self) -> bool:
        return self.relative_error <= 1e-12


def verify_dp_ratio(params: PerturbationParams) -> DPRatioReport:
    """Max over ``(x, x', y)`` of ``Pr[M(x)=y] / Pr[M(x')=y]``, compared to ``e^epsilon``."""
    P = output_distribution(params)
    col_max = P.max(axis=0)
    col_min = P.min(axis=0)
    ratios = col_max / col_min
    y = int(np.argmax(ratios))
    x, x2 = int(np.argmax(P[:, y])), int(np.argmin(P[:, y]))
    target = math.exp(params.epsilon)
    max_ratio = float(ratios[y])
    return DPRatioReport(params.epsilon, params.k, max_ratio, target,
                         abs(max_ratio - target) / target, (x, x2, y))
