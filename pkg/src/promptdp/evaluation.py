"""Privacy and utility metrics for restored prompts.

Reconstruction is judged per token occurrence. Restored text is tokenized
the same way as the original. When token counts agree, tokens are paired by
position. Otherwise a global alignment pairs them, using normalized edit
distance as the substitution cost and 1 per gap. A restored token counts as
reconstructed when it has the same length as the original and differs in at
most ``floor(alpha * len)`` positions, so ``alpha = 0`` is exact match.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import PromptDPError, ProtocolError, TransportError
from .mechanism import PerturbationParams, gamma_from_epsilon, perturb_document
from .restoration import RestorationResult, RestorerConfig, restore_corpus
from .text import DEFAULT_ALPHABET, AnnotatedDocument, CharAlphabet, Token, tokenize, word_length_histogram
from .theory import baseline_T_alpha

logger = logging.getLogger(__name__)

ADDRESS_COMPONENTS = ("LOCATION-STREET", "LOCATION-CITY", "LOCATION-STATE")


# -- alignment ---------------------------------------------------------------

def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _text(t):
    return t if isinstance(t, str) else t.text


@dataclass(frozen=True)
class TokenAlignment:
    pairs: tuple[tuple[int, int | None], ...]
    method: str  # "positional" or "sequence"

    def restored_for(self, restored: Sequence) -> list:
        """Restored token (or None) paired with each original token, in original order."""
        return [None if j is None else restored[j] for _, j in self.pairs]


def align_tokens(original: Sequence[Token | str], restored: Sequence[Token | str]) -> TokenAlignment:
    n, m = len(original), len(restored)
    if n == m:
        return TokenAlignment(tuple((i, i) for i in range(n)), "positional")

    a = [_text(t) for t in original]
    b = [_text(t) for t in restored]

    def sub(i, j):
        x, y = a[i], b[j]
        return edit_distance(x, y) / max(len(x), len(y), 1)

    cost = np.zeros((n + 1, m + 1))
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    move = np.zeros((n + 1, m + 1), dtype=np.int8)  # 0 diag, 1 up (original gap), 2 left (restored extra)
    move[1:, 0] = 1
    move[0, 1:] = 2
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + sub(i - 1, j - 1)
            up = cost[i - 1, j] + 1.0
            left = cost[i, j - 1] + 1.0
            best = min(diag, up, left)
            cost[i, j] = best
            move[i, j] = 0 if diag == best else (1 if up == best else 2)

    pairs = []
    i, j = n, m
    while i > 0 or j > 0:
        mv = move[i, j]
        if mv == 0:
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif mv == 1:
            pairs.append((i - 1, None))
            i -= 1
        else:
            j -= 1
    pairs.reverse()
    return TokenAlignment(tuple(pairs), "sequence")


# -- per-token matching ------------------------------------------------------

_PUNCT = string.punctuation


def _normalize(s, case_fold, strip_punctuation):
    if strip_punctuation:
        s = s.strip(_PUNCT)
    if case_fold:
        s = s.casefold()
    return s


def token_reconstructed(original: Token | str, restored: Token | str | None, alpha: float = 0.0,
                        case_fold: bool = False, strip_punctuation: bool = False) -> bool:
    if restored is None:
        return False
    a = _normalize(_text(original), case_fold, strip_punctuation)
    b = _normalize(_text(restored), case_fold, strip_punctuation)
    if len(a) != len(b):
        return False
    return sum(x != y for x, y in zip(a, b)) <= math.floor(alpha * len(a))


def _restored_text(r):
    return r.restored_text if isinstance(r, RestorationResult) else r


def _lookup(restorations, doc, i):
    if isinstance(restorations, Mapping):
        try:
            return restorations[doc.id]
        except KeyError:
            raise PromptDPError(f"no restoration for document {doc.id!r}") from None
    return restorations[i]


def token_matches(doc: AnnotatedDocument, restored_text: str, alpha: float = 0.0, **norm) -> list[bool]:
    """Whether each original token of ``doc`` is reconstructed in ``restored_text``."""
    restored = tokenize(restored_text)
    alignment = align_tokens(doc.tokens, restored)
    return [token_reconstructed(o, r, alpha, **norm)
            for o, r in zip(doc.tokens, alignment.restored_for(restored))]


# -- rates -------------------------------------------------------------------

@dataclass(frozen=True)
class Rate:
    reconstructed: float  # a count, or a sum of per-entity fractions
    total: int

    @property
    def percent(self) -> float | None:
        """Percentage, or None when there is nothing to count."""
        return None if self.total == 0 else 100.0 * self.reconstructed / self.total

    def __add__(self, other):
        return Rate(self.reconstructed + other.reconstructed, self.total + other.total)


@dataclass(frozen=True)
class RateSummary:
    sensitive: Rate
    non_sensitive: Rate
    per_category: dict[str, Rate]


def _all_matches(originals, restorations, alpha, norm):
    return [token_matches(doc, _restored_text(_lookup(restorations, doc, i)), alpha, **norm)
            for i, doc in enumerate(originals)]


def _rates_from_matches(originals, matches):
    sens = Counter()
    non = Counter()
    cats: dict[str, Counter] = {}
    for doc, hits in zip(originals, matches):
        cat_of = doc.categories_of()
        for i, hit in enumerate(hits):
            bucket = sens if i in cat_of else non
            bucket["n"] += 1
            bucket["hit"] += hit
            for c in cat_of.get(i, ()):
                cc = cats.setdefault(c, Counter())
                cc["n"] += 1
                cc["hit"] += hit
    return RateSummary(
        Rate(sens["hit"], sens["n"]),
        Rate(non["hit"], non["n"]),
        {c: Rate(v["hit"], v["n"]) for c, v in sorted(cats.items())},
    )


def reconstruction_rates(originals: Sequence[AnnotatedDocument], restorations, alpha: float = 0.0,
                         case_fold: bool = False, strip_punctuation: bool = False) -> RateSummary:
    """Sensitive, non-sensitive and per-category reconstruction counts.

    ``restorations`` is either a sequence parallel to ``originals`` or a mapping
    from document id; items are restored strings or :class:`RestorationResult`.
    A token in any entity is sensitive. Every occurrence counts.
    """
    norm = {"case_fold": case_fold, "strip_punctuation": strip_punctuation}
    return _rates_from_matches(originals, _all_matches(originals, restorations, alpha, norm))


@dataclass(frozen=True)
class EntityRates:
    single_part: Rate          # share of parts restored, averaged over entities
    full_entity: Rate
    single_part_tokens: Rate   # share of parts restored, pooled over all entity tokens


@dataclass(frozen=True)
class EntityMetrics:
    per_category: dict[str, EntityRates]
    complete_address: Rate


def _entity_from_matches(originals, matches):
    parts: dict[str, Rate] = {}
    tokens: dict[str, Rate] = {}
    whole: dict[str, Rate] = {}
    address = Rate(0, 0)
    for doc, hits in zip(originals, matches):
        by_cat: dict[str, list[bool]] = {}
        for ent in doc.entities:
            ok = [hits[i] for i in ent.token_indices]
            parts[ent.category] = parts.get(ent.category, Rate(0, 0)) + Rate(sum(ok) / len(ok), 1)
            tokens[ent.category] = tokens.get(ent.category, Rate(0, 0)) + Rate(sum(ok), len(ok))
            whole[ent.category] = whole.get(ent.category, Rate(0, 0)) + Rate(int(all(ok)), 1)
            by_cat.setdefault(ent.category, []).extend(ok)
        if all(c in by_cat for c in ADDRESS_COMPONENTS):
            address += Rate(int(all(all(by_cat[c]) for c in ADDRESS_COMPONENTS)), 1)
    per = {c: EntityRates(parts[c], whole[c], tokens[c]) for c in sorted(parts)}
    return EntityMetrics(per, address)


def entity_reconstruction(originals: Sequence[AnnotatedDocument], restorations, alpha: float = 0.0,
                          **norm) -> EntityMetrics:
    """Part-level and whole-entity reconstruction per category.

    An entity is fully reconstructed only if every one of its tokens is.
    ``single_part`` is the fraction of an entity's tokens restored, averaged
    over entities, so it never falls below ``full_entity``. The token-pooled
    ``single_part_tokens`` lets long entities outweigh short ones and can.

    A document takes part in the complete-address rate only if it has street,
    city and state entities, and counts as reconstructed only if all of them are.
    """
    return _entity_from_matches(originals, _all_matches(originals, restorations, alpha, norm))


# -- semantic similarity -----------------------------------------------------

class Embedder(Protocol):
    def __call__(self, texts: Sequence[str]) -> np.ndarray: ...


class UnigramEmbedder:
    """Bag-of-tokens count vectors over the vocabulary of the texts in one call.

    Offline and deterministic; texts sharing no token are orthogonal.
    """

    def __call__(self, texts):
        toks = [t.text for text in texts for t in tokenize(text)]
        vocab = {w: i for i, w in enumerate(sorted(set(toks)))}
        out = np.zeros((len(texts), max(len(vocab), 1)))
        for row, text in enumerate(texts):
            for t in tokenize(text):
                out[row, vocab[t.text]] += 1
        return out


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, endpoint_url: str, model_name: str, api_key_env: str = "OPENAI_API_KEY",
                 timeout: float = 60.0, transport: httpx.BaseTransport | None = None):
        url = endpoint_url.rstrip("/")
        self.url = url if url.endswith("/embeddings") else url + "/embeddings"
        self.model_name = model_name
        headers = {}
        key = os.environ.get(api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def __call__(self, texts):
        try:
            resp = self._client.post(self.url, json={"model": self.model_name, "input": list(texts)})
        except httpx.HTTPError as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
            vectors = [item["embedding"] for item in sorted(payload["data"], key=lambda d: d.get("index", 0))]
            arr = np.asarray(vectors, dtype=float)
        except (ValueError, KeyError, TypeError):
            raise ProtocolError("unexpected embedding response", resp.text) from None
        if arr.ndim != 2 or arr.shape[0] != len(texts):
            raise ProtocolError("embedding count does not match input count", payload)
        return arr


def semantic_similarity(text_a: str, text_b: str, embedder: Embedder | None = None) -> float:
    """Cosine similarity of two embeddings as a percentage, clamped below at 0."""
    if not text_a.strip() or not text_b.strip():
        logger.warning("semantic similarity of empty text is reported as 0")
        return 0.0
    embedder = embedder or UnigramEmbedder()
    va, vb = np.asarray(embedder([text_a, text_b]), dtype=float)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    cos = float(np.dot(va, vb) / (na * nb))
    return 100.0 * min(1.0, max(0.0, cos))


# -- reports -----------------------------------------------------------------

@dataclass
class EvaluationReport:
    epsilon: float | None
    gamma: float | None
    baseline_prob: float | None
    sensitive_rate: float | None
    non_sensitive_rate: float | None
    per_category_rates: dict[str, float | None] = field(default_factory=dict)
    entity_rates: dict[str, dict[str, float | None]] = field(default_factory=dict)
    complete_address_rate: float | None = None
    semantic_similarity: float | None = None
    sensitive_baseline_prob: float | None = None
    counts: dict[str, int] = field(default_factory=dict)
    error: str | None = None

    @property
    def privacy_preserved(self) -> float | None:
        return None if self.sensitive_rate is None else 100.0 - self.sensitive_rate

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon, "gamma": self.gamma, "baseline_prob": self.baseline_prob,
            "sensitive_baseline_prob": self.sensitive_baseline_prob,
            "sensitive_rate": self.sensitive_rate, "non_sensitive_rate": self.non_sensitive_rate,
            "semantic_similarity": self.semantic_similarity, "privacy_preserved": self.privacy_preserved,
            "per_category_rates": self.per_category_rates, "entity_rates": self.entity_rates,
            "complete_address_rate": self.complete_address_rate, "counts": self.counts, "error": self.error,
        }


def _pct(rate: Rate):
    return rate.percent


def evaluate(originals: Sequence[AnnotatedDocument], restorations, epsilon: float | None = None,
             alpha: float = 0.0, k: int = DEFAULT_ALPHABET.k, embedder: Embedder | None = None,
             original_summaries: Mapping[str, str] | None = None, **norm) -> EvaluationReport:
    """Full report for one restored corpus.

    Similarity compares the original and restored summaries when both exist,
    otherwise the original and restored texts; it is averaged over documents.
    The baseline is computed on the length histogram of all original tokens.
    """
    matches = _all_matches(originals, restorations, alpha, norm)
    rates = _rates_from_matches(originals, matches)
    ents = _entity_from_matches(originals, matches)

    gamma = baseline = sens_baseline = None
    if epsilon is not None:
        gamma = gamma_from_epsilon(epsilon, k)
        hist = word_length_histogram(list(originals))
        if hist:
            baseline = 100.0 * baseline_T_alpha(hist, alpha, gamma)
        sens_hist = Counter(doc.tokens[i].length for doc in originals for i in doc.sensitive_indices())
        if sens_hist:
            sens_baseline = 100.0 * baseline_T_alpha(sens_hist, alpha, gamma)

    sims = []
    for i, doc in enumerate(originals):
        r = _lookup(restorations, doc, i)
        ref_summary = (original_summaries or {}).get(doc.id)
        if ref_summary and isinstance(r, RestorationResult) and r.summary:
            sims.append(semantic_similarity(ref_summary, r.summary, embedder))
        else:
            sims.append(semantic_similarity(doc.raw_text, _restored_text(r), embedder))

    counts = {"sensitive": rates.sensitive.total, "non_sensitive": rates.non_sensitive.total,
              "documents": len(originals), "complete_address": ents.complete_address.total}
    counts.update({f"category[{c}]": r.total for c, r in rates.per_category.items()})
    return EvaluationReport(
        epsilon=epsilon,
        gamma=gamma,
        baseline_prob=baseline,
        sensitive_rate=_pct(rates.sensitive),
        non_sensitive_rate=_pct(rates.non_sensitive),
        per_category_rates={c: _pct(r) for c, r in rates.per_category.items()},
        entity_rates={c: {"single_part": _pct(e.single_part), "full_entity": _pct(e.full_entity),
                          "single_part_tokens": _pct(e.single_part_tokens)}
                      for c, e in ents.per_category.items()},
        complete_address_rate=_pct(ents.complete_address),
        semantic_similarity=float(np.mean(sims)) if sims else None,
        sensitive_baseline_prob=sens_baseline,
        counts=counts,
    )


def sweep(corpus: Sequence[AnnotatedDocument], epsilons: Sequence[float], restorer: RestorerConfig,
          alpha: float = 0.0, seed: int = 0, embedder: Embedder | None = None,
          alphabet: CharAlphabet = DEFAULT_ALPHABET, strict: bool = False, passes: int = 1,
          progress: Callable[[float], None] | None = None) -> list[EvaluationReport]:
    """Perturb, restore and evaluate ``corpus`` at every epsilon (rows sorted by epsilon).

    A restorer failure at one epsilon is recorded in that row's ``error`` and
    the sweep moves on.
    """
    hist = word_length_histogram(list(corpus))
    reports = []
    for eps in sorted(epsilons):
        if progress:
            progress(eps)
        params = PerturbationParams(eps, alphabet.k, seed)
        try:
            perturbed = [perturb_document(d, params, alphabet, strict) for d in corpus]
            restored = restore_corpus(perturbed, restorer, passes)
            final = {sid: results[-1] for sid, results in restored.items()}
            report = evaluate(corpus, final, eps, alpha, alphabet.k, embedder)
        except (PromptDPError, httpx.HTTPError) as exc:
            logger.error("epsilon=%s failed: %s", eps, exc)
            base = 100.0 * baseline_T_alpha(hist, alpha, params.gamma) if hist else None
            report = EvaluationReport(eps, params.gamma, base, None, None, error=f"{type(exc).__name__}: {exc}")
        reports.append(report)
    return reports


CSV_COLUMNS = ("epsilon", "gamma", "baseline_prob", "sensitive_rate", "non_sensitive_rate",
               "semantic_similarity", "privacy_preserved")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def reports_to_csv(reports: Sequence[EvaluationReport]) -> str:
    cats = sorted({c for r in reports for c in r.per_category_rates})
    header = list(CSV_COLUMNS) + [f"rate[{c}]" for c in cats] + ["n_sensitive", "n_non_sensitive", "error"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in reports:
        row = [r.epsilon, r.gamma, r.baseline_prob, r.sensitive_rate, r.non_sensitive_rate,
               r.semantic_similarity, r.privacy_preserved]
        row += [r.per_category_rates.get(c) for c in cats]
        row += [r.counts.get("sensitive"), r.counts.get("non_sensitive"), r.error]
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()
