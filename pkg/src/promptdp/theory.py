"""Closed-form reconstruction probabilities under character-level k-RR.

An adversary sees a perturbed character and guesses the original. For words
whose characters were drawn uniformly at random, the best it can do is
captured by a handful of closed forms:

* per-character posterior with an arbitrary prior (Bayes over the k-RR channel),
* ``(1 - gamma)**n`` for guessing an ``n``-character random word exactly,
* a binomial tail for landing within Hamming distance ``ell``,
* the corpus-level baseline: the length-weighted mean of that tail with
  ``ell = floor(alpha * n)``.

:func:`brute_force_channel` enumerates the mechanism's branches directly and
is kept independent of every formula here, so the two can be checked against
each other on small alphabets.

Character indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParameterError
from .mechanism import gamma_from_epsilon

# Word lengths above this use log-space binomial terms.
_EXACT_BINOMIAL_MAX = 50


@dataclass(frozen=True)
class CharPrior:
    probabilities: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probabilities)
        object.__setattr__(self, "probabilities", p)
        if len(p) < 2:
            raise ParameterError("a prior needs at least two characters")
        if min(p) < 0 or abs(math.fsum(p) - 1.0) > 1e-9:
            raise ParameterError("prior probabilities must be nonnegative and sum to 1")

    @property
    def k(self) -> int:
        return len(self.probabilities)

    @classmethod
    def uniform(cls, k: int) -> "CharPrior":
        return cls((1.0 / k,) * k)

    def __getitem__(self, i):
        return self.probabilities[i]


def _check_gamma(gamma, open_interval=False):
    ok = 0 < gamma < 1 if open_interval else 0 <= gamma <= 1
    if not ok:
        raise ParameterError(f"gamma out of range: {gamma}")


def posterior_char(prior: CharPrior, observed: int, candidate: int, gamma: float, k: int | None = None) -> float:
    """``Pr[original = candidate | observed]`` for the k-RR channel and a character prior."""
    if not isinstance(prior, CharPrior):
        prior = CharPrior(prior)
    k = prior.k if k is None else k
    if k != prior.k:
        raise ParameterError(f"prior has {prior.k} entries but k={k}")
    if not (0 <= observed < k and 0 <= candidate < k):
        raise ParameterError("character index out of range")
    _check_gamma(gamma)
    c = (1 - gamma) * (k - 1) - gamma
    delta = 1.0 if candidate == observed else 0.0
    return (gamma + c * delta) * prior[candidate] / (gamma + c * prior[observed])


def random_word_exact_prob(word_length: int, gamma: float) -> float:
    """Probability a uniformly random word survives k-RR unchanged: ``(1 - gamma)**n``."""
    if word_length < 1:
        raise ParameterError("word length must be positive")
    _check_gamma(gamma)
    return (1.0 - gamma) ** word_length


def log_likelihood_ratio(word_length: int, gamma: float) -> float:
    """``n * (ln(1 - gamma) - ln(gamma))``: all-kept versus all-replaced hypotheses.

    Positive once ``gamma < 1/2``, i.e. ``epsilon > ln(k - 1)``.
    """
    if word_length < 1:
        raise ParameterError("word length must be positive")
    if not 0 < gamma < 1:
        raise ParameterError(f"log-likelihood ratio undefined at gamma={gamma}")
    return word_length * (math.log1p(-gamma) - math.log(gamma))


def _binom_term(n, m, gamma):
    if n <= _EXACT_BINOMIAL_MAX:
        return math.comb(n, m) * (1.0 - gamma) ** (n - m) * gamma ** m
    if (gamma == 0.0 and m > 0) or (gamma == 1.0 and m < n):
        return 0.0
    log_c = math.lgamma(n + 1) - math.lgamma(m + 1) - math.lgamma(n - m + 1)
    log_keep = (n - m) * math.log1p(-gamma) if n > m else 0.0
    log_flip = m * math.log(gamma) if m else 0.0
    return math.exp(log_c + log_keep + log_flip)


def cum_hamming_prob(ell: int, word_length: int, gamma: float) -> float:
    """Probability that at most ``ell`` of ``word_length`` characters were replaced."""
    if word_length < 1:
        raise ParameterError("word length must be positive")
    if not 0 <= ell <= word_length:
        raise ParameterError(f"ell={ell} outside [0, {word_length}]")
    _check_gamma(gamma)
    if ell == word_length:
        return 1.0
    return min(1.0, math.fsum(_binom_term(word_length, m, gamma) for m in range(ell + 1)))


def baseline_T_alpha(histogram: Mapping[int, int], alpha: float, gamma: float) -> float:
    """Chance-level fraction of words recovered within relative Hamming distance ``alpha``.

    ``histogram`` maps word length to the number of words of that length.
    """
    if not 0 <= alpha <= 1:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    total = sum(histogram.values())
    if not histogram or total <= 0:
        raise ParameterError("histogram is empty")
    return math.fsum(
        (count / total) * cum_hamming_prob(math.floor(alpha * length), length, gamma)
        for length, count in histogram.items() if count
    )


def epsilon_grid(start: float = 1.0, stop: float = 10.0, step: float = 0.5) -> list[float]:
    """Inclusive grid ``start, start+step, ..., stop`` without float drift."""
    if step <= 0 or stop < start:
        raise ParameterError("epsilon range needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + i * step, 12) for i in range(n + 1)]


@dataclass(frozen=True)
class BaselineCurve:
    rows: tuple[tuple[float, float, float], ...]  # (epsilon, gamma, probability)
    alpha: float
    k: int

    def to_csv(self) -> str:
        lines = ["epsilon,gamma,probability"]
        lines += [f"{e!r},{g!r},{p!r}" for e, g, p in self.rows]
        return "\n".join(lines) + "\n"


def baseline_curve(histogram: Mapping[int, int], alpha: float, epsilons: Iterable[float],
                   k: int = 94) -> BaselineCurve:
    rows = []
    for eps in epsilons:
        g = gamma_from_epsilon(eps, k)
        rows.append((float(eps), g, baseline_T_alpha(histogram, alpha, g)))
    return BaselineCurve(tuple(rows), alpha, k)


class ChannelTable:
    """Exhaustive joint distribution of (input word, output word) for a tiny alphabet.

    Built by walking the mechanism's branches for every character: keep with
    probability ``1 - gamma``, or replace with each of the ``k - 1`` other symbols
    with probability ``gamma / (k - 1)``. Queries sum entries of the joint tables.
    """

    def __init__(self, k: int, word_length: int, gamma: float):
        self.k = k
        self.word_length = word_length
        self.gamma = gamma
        self.words = list(itertools.product(range(k), repeat=word_length))
        self._pos = {w: i for i, w in enumerate(self.words)}
        n = len(self.words)
        self.channel = np.zeros((n, n))
        for w in self.words:
            self._walk(w, 0, [], 1.0)

    def _walk(self, word, i, out, prob):
        if i == len(word):
            self.channel[self._pos[word], self._pos[tuple(out)]] += prob
            return
        c = word[i]
        # b = 0: keep
        self._walk(word, i + 1, out + [c], prob * (1 - self.gamma))
        # b = 1: uniform over the other symbols
        others = [s for s in range(self.k) if s != c]
        for s in others:
            self._walk(word, i + 1, out + [s], prob * self.gamma / len(others))

    def joint(self, char_prior: Sequence[float] | None = None) -> np.ndarray:
        """``J[x, y] = Pr[input = x] * Pr[output = y | x]`` with i.i.d. characters from ``char_prior``."""
        prior = np.full(self.k, 1.0 / self.k) if char_prior is None else np.asarray(char_prior, dtype=float)
        word_prior = np.array([np.prod([prior[c] for c in w]) for w in self.words])
        return word_prior[:, None] * self.channel

    def posterior(self, observed: Sequence[int], candidate: Sequence[int], char_prior=None) -> float:
        """``Pr[input = candidate | output = observed]``."""
        J = self.joint(char_prior)
        col = J[:, self._pos[tuple(observed)]]
        return float(col[self._pos[tuple(candidate)]] / col.sum())

    def hamming_ball_posterior(self, observed: Sequence[int], ell: int, char_prior=None) -> float:
        """Posterior mass of inputs within Hamming distance ``ell`` of ``observed``."""
        J = self.joint(char_prior)
        col = J[:, self._pos[tuple(observed)]]
        obs = tuple(observed)
        inside = [i for i, w in enumerate(self.words) if sum(a != b for a, b in zip(w, obs)) <= ell]
        return float(col[inside].sum() / col.sum())

    def exact_match_prob(self, char_prior=None) -> float:
        """``Pr[output = input]`` over the joint."""
        return float(np.trace(self.joint(char_prior)))


def brute_force_channel(k: int, word_length: int, gamma: float) -> ChannelTable:
    """Enumerate the full k-RR channel for ``k <= 5`` and words of length ``<= 3``."""
    if not 2 <= k <= 5 or not 1 <= word_length <= 3:
        raise ParameterError("brute-force channel limited to 2 <= k <= 5 and 1 <= word length <= 3")
    _check_gamma(gamma)
    return ChannelTable(k, word_length, gamma)
