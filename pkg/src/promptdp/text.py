"""Character alphabet, whitespace tokenization and annotated corpora.

A token is a maximal run of non-whitespace characters. Punctuation stays
inside tokens, so ``"cbrr/MpondenXe"`` is a single word. The whitespace
between tokens is kept alongside the tokens so that every document can be
rebuilt byte for byte after its tokens have been replaced.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusError, ParameterError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\S+")

PRINTABLE_ASCII = "".join(chr(c) for c in range(0x21, 0x7F))


@dataclass(frozen=True)
class CharAlphabet:
    """Ordered set of characters the mechanism draws replacements from."""

    characters: str = PRINTABLE_ASCII
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.characters)) != len(self.characters):
            raise ParameterError("alphabet characters must be distinct")
        if len(self.characters) < 2:
            raise ParameterError("alphabet needs at least two characters")
        if any(c.isspace() for c in self.characters):
            raise ParameterError("whitespace cannot be part of the alphabet")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.characters)})

    @property
    def k(self) -> int:
        return len(self.characters)

    def __len__(self):
        return len(self.characters)

    def __contains__(self, c):
        return c in self._index

    def __getitem__(self, i):
        return self.characters[i]

    def index(self, c: str) -> int:
        """Position of ``c`` in the alphabet; raises KeyError if absent."""
        return self._index[c]

    def get_index(self, c: str, default: int = -1) -> int:
        return self._index.get(c, default)

    @classmethod
    def from_file(cls, path) -> "CharAlphabet":
        """Read an alphabet override: every non-whitespace character of the file, in order."""
        text = Path(path).read_text(encoding="utf-8")
        chars = []
        for c in text:
            if not c.isspace() and c not in chars:
                chars.append(c)
        return cls("".join(chars))


DEFAULT_ALPHABET = CharAlphabet()


@dataclass(frozen=True)
class Token:
    text: str
    start_offset: int

    @property
    def length(self) -> int:
        return len(self.text)

    @property
    def end_offset(self) -> int:
        return self.start_offset + len(self.text)


def tokenize(raw_text: str) -> list[Token]:
    """Split ``raw_text`` into maximal runs of non-whitespace characters.

    >>> tokenize("Please call")
    [Token(text='Please', start_offset=0), Token(text='call', start_offset=7)]
    """
    return [Token(m.group(), m.start()) for m in _TOKEN_RE.finditer(raw_text)]


def split_layout(raw_text: str) -> tuple[list[Token], list[str]]:
    """Return the tokens of ``raw_text`` and the ``len(tokens) + 1`` whitespace gaps around them."""
    tokens = tokenize(raw_text)
    gaps = []
    pos = 0
    for tok in tokens:
        gaps.append(raw_text[pos:tok.start_offset])
        pos = tok.end_offset
    gaps.append(raw_text[pos:])
    return tokens, gaps


def detokenize(tokens: Sequence[Token | str], gaps: Sequence[str]) -> str:
    """Interleave token texts with whitespace gaps; inverse of :func:`split_layout`."""
    if len(gaps) != len(tokens) + 1:
        raise ParameterError(f"need {len(tokens) + 1} gaps for {len(tokens)} tokens, got {len(gaps)}")
    parts = [gaps[0]]
    for tok, gap in zip(tokens, gaps[1:]):
        parts.append(tok if isinstance(tok, str) else tok.text)
        parts.append(gap)
    return "".join(parts)


def retokenize_like(texts: Sequence[str], gaps: Sequence[str]) -> list[Token]:
    """Build tokens with offsets for ``texts`` laid out between ``gaps``."""
    tokens = []
    pos = len(gaps[0])
    for text, gap in zip(texts, gaps[1:]):
        tokens.append(Token(text, pos))
        pos += len(text) + len(gap)
    return tokens


@dataclass(frozen=True)
class EntityAnnotation:
    token_indices: tuple[int, ...]
    category: str
    entity_id: str

    def __post_init__(self):
        idx = tuple(self.token_indices)
        object.__setattr__(self, "token_indices", idx)
        if not idx:
            raise CorpusError(f"entity {self.entity_id!r} covers no tokens")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise CorpusError(f"entity {self.entity_id!r} token indices must be strictly increasing")


@dataclass(frozen=True)
class AnnotatedDocument:
    id: str
    raw_text: str
    tokens: tuple[Token, ...]
    entities: tuple[EntityAnnotation, ...] = ()
    gaps: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entities", tuple(self.entities))
        if not self.gaps:
            _, gaps = split_layout(self.raw_text)
            object.__setattr__(self, "gaps", tuple(gaps))
        n = len(self.tokens)
        seen: dict[str, set[int]] = {}
        for ent in self.entities:
            if ent.token_indices[0] < 0 or ent.token_indices[-1] >= n:
                raise CorpusError(f"document {self.id!r}: entity {ent.entity_id!r} refers to a missing token")
            taken = seen.setdefault(ent.category, set())
            clash = taken.intersection(ent.token_indices)
            if clash:
                raise CorpusError(
                    f"document {self.id!r}: token(s) {sorted(clash)} belong to two {ent.category} entities"
                )
            taken.update(ent.token_indices)

    @classmethod
    def from_text(cls, id: str, raw_text: str, entities: Iterable[EntityAnnotation] = ()) -> "AnnotatedDocument":
        tokens, gaps = split_layout(raw_text)
        return cls(id=id, raw_text=raw_text, tokens=tuple(tokens), entities=tuple(entities), gaps=tuple(gaps))

    def sensitive_indices(self) -> set[int]:
        return {i for ent in self.entities for i in ent.token_indices}

    def categories_of(self) -> dict[int, list[str]]:
        """Map token index to the categories annotated on it."""
        out: dict[int, list[str]] = {}
        for ent in self.entities:
            for i in ent.token_indices:
                out.setdefault(i, []).append(ent.category)
        return out

    def non_alphabet_count(self, alphabet: CharAlphabet = DEFAULT_ALPHABET) -> int:
        """Number of token characters that the mechanism will pass through unchanged."""
        return sum(1 for tok in self.tokens for c in tok.text if c not in alphabet)


def word_length_histogram(doc_or_tokens) -> dict[int, int]:
    """Count tokens by length. Accepts a document, a list of documents, or tokens/strings."""
    if isinstance(doc_or_tokens, AnnotatedDocument):
        items = doc_or_tokens.tokens
    else:
        items = []
        for x in doc_or_tokens:
            if isinstance(x, AnnotatedDocument):
                items.extend(x.tokens)
            else:
                items.append(x)
    counts = Counter(len(x) if isinstance(x, str) else x.length for x in items)
    return dict(sorted(counts.items()))


def _span_to_tokens(doc_id, tokens, start, end, strict):
    covered = [i for i, t in enumerate(tokens) if t.start_offset < end and t.end_offset > start]
    if not covered:
        raise CorpusError(f"document {doc_id!r}: span [{start}, {end}) covers no token")
    first, last = tokens[covered[0]], tokens[covered[-1]]
    if first.start_offset != start or last.end_offset != end:
        if strict:
            raise CorpusError(
                f"document {doc_id!r}: span [{start}, {end}) is not aligned to token boundaries"
            )
        logger.warning("document %r: span [%d, %d) clipped to tokens %s", doc_id, start, end, covered)
    return covered


def parse_document(obj: dict, strict: bool = True, line: int | None = None) -> AnnotatedDocument:
    where = f"line {line}: " if line is not None else ""
    try:
        doc_id = str(obj["id"])
        text = obj["text"]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{where}document is missing field {exc}") from None
    if not isinstance(text, str):
        raise CorpusError(f"{where}document {doc_id!r}: 'text' must be a string")
    tokens, gaps = split_layout(text)

    entities = []
    taken: dict[str, set[int]] = {}
    for n, ent in enumerate(obj.get("entities", [])):
        try:
            start, end, category = int(ent["start"]), int(ent["end"]), str(ent["category"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{where}document {doc_id!r}: bad entity #{n}: {exc}") from None
        if not 0 <= start < end <= len(text):
            raise CorpusError(f"{where}document {doc_id!r}: span [{start}, {end}) out of range")
        indices = _span_to_tokens(doc_id, tokens, start, end, strict)
        clash = taken.setdefault(category, set()).intersection(indices)
        if clash:
            if strict:
                raise CorpusError(f"document {doc_id!r}: overlapping {category} spans at tokens {sorted(clash)}")
            logger.warning("document %r: dropping tokens %s already in another %s entity",
                           doc_id, sorted(clash), category)
            indices = [i for i in indices if i not in clash]
            if not indices:
                continue
        taken[category].update(indices)
        entity_id = str(ent.get("entity_id", f"{doc_id}:{n}"))
        entities.append(EntityAnnotation(tuple(indices), category, entity_id))

    doc = AnnotatedDocument(doc_id, text, tuple(tokens), tuple(entities), tuple(gaps))
    bad = doc.non_alphabet_count()
    if bad:
        if strict:
            raise CorpusError(f"document {doc_id!r}: {bad} character(s) outside the alphabet")
        logger.info("document %r: %d character(s) outside the alphabet pass through unperturbed", doc_id, bad)
    return doc


def iter_jsonl(path):
    """Yield ``(line_number, object)`` for the non-blank lines of a JSONL file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: malformed JSON on line {lineno}: {exc.msg}") from None


def load_corpus(path, format: str = "jsonl", strict: bool = True) -> list[AnnotatedDocument]:
    """Load an annotated corpus.

    Each line holds ``{"id", "text", "entities": [{"start", "end", "category", "entity_id"}]}``
    with character offsets (``end`` exclusive). Spans are mapped onto whole tokens.
    In strict mode a span that starts or ends inside a token, overlapping spans of one
    category, or characters outside the alphabet raise :class:`CorpusError`; in lenient
    mode spans are clipped to the tokens they overlap and a warning is logged.
    Lines carrying a ``"params"`` key (headers of perturbed files) are skipped.
    """
    if format != "jsonl":
        raise ParameterError(f"unsupported corpus format {format!r}")
    docs = []
    for lineno, obj in iter_jsonl(path):
        if isinstance(obj, dict) and "params" in obj and "text" not in obj:
            continue
        docs.append(parse_document(obj, strict=strict, line=lineno))
    return docs


def document_to_json(doc: AnnotatedDocument) -> dict:
    """Inverse of :func:`parse_document`: entity tokens become character spans again."""
    entities = []
    for ent in doc.entities:
        first, last = doc.tokens[ent.token_indices[0]], doc.tokens[ent.token_indices[-1]]
        entities.append({"start": first.start_offset, "end": last.end_offset,
                         "category": ent.category, "entity_id": ent.entity_id})
    return {"id": doc.id, "text": doc.raw_text, "entities": entities}
