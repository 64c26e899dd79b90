"""Restoring perturbed prompts.

Two restorers share one entry point, :func:`restore`:

``remote``
    Any OpenAI-compatible ``/chat/completions`` endpoint. Transient failures
    (timeouts, connection errors, 5xx, 408/429) are retried with exponential
    backoff; other 4xx answers are configuration errors and are not retried.
``mock``
    Offline and deterministic. Each token is replaced by the same-length
    dictionary word closest in Hamming distance, provided that word is within
    ``ceil(len / 2)`` substitutions. It sees no context, so it is a lower bound
    on what a language model can recover.

Only :class:`~promptdp.mechanism.PerturbedDocument` objects (or results of an
earlier pass over one) are accepted, so original text cannot reach a remote
endpoint through this module.
"""

from __future__ import annotations

import functools
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import httpx
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ProtocolError, RestorerConfigurationError, TransportError
from .mechanism import PerturbedDocument
from .text import Token, detokenize, split_layout

logger = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are a text restoration and summarization assistant.\n"
    "First, correct only the errors introduced by distortion/noise. Do not make any unnecessary changes. "
    "Preserve the original wording, punctuation, capitalization, and formatting as much as possible.\n"
    "Second, create a concise and accurate summary of the restored text. Focus on the main ideas and key "
    "details, and avoid unnecessary details. Do not add opinions or any prefacing."
)
_ROLE, _RESTORE_BLOCK, _SUMMARY_BLOCK = SYSTEM_PROMPT.split("\n")

RESTORE_ONLY_PROMPT = "You are a text restoration assistant.\n" + _RESTORE_BLOCK
SUMMARIZE_ONLY_PROMPT = "You are a text summarization assistant.\n" + _SUMMARY_BLOCK

RESTORED_HEADER = "RESTORED:"
SUMMARY_HEADER = "SUMMARY:"

MODES = ("unified", "restore_only", "summarize_only")

_UNIFIED_INSTRUCTIONS = (
    f"Answer with exactly two sections. Start the first with the line {RESTORED_HEADER} followed by the "
    f"restored text, and the second with the line {SUMMARY_HEADER} followed by the summary.\n\nText:\n"
)


def build_restoration_prompt(perturbed_text: str, mode: str | None = "unified") -> list[dict]:
    """Chat messages asking a model to restore and/or summarize ``perturbed_text``."""
    mode = mode or "unified"
    if mode == "unified":
        return [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": _UNIFIED_INSTRUCTIONS + perturbed_text},
        ]
    if mode == "restore_only":
        system = RESTORE_ONLY_PROMPT
    elif mode == "summarize_only":
        system = SUMMARIZE_ONLY_PROMPT
    else:
        raise ValueError(f"unknown prompt mode {mode!r}; expected one of {MODES}")
    return [{"role": "system", "content": system}, {"role": "user", "content": perturbed_text}]


def parse_unified_response(content: str, raw=None) -> tuple[str, str]:
    """Split a unified-mode answer into ``(restored_text, summary)``."""
    r = content.find(RESTORED_HEADER)
    s = content.find(SUMMARY_HEADER, r + 1 if r >= 0 else 0)
    if r < 0 or s < 0:
        raise ProtocolError("response lacks the RESTORED:/SUMMARY: headers", raw if raw is not None else content)
    restored = content[r + len(RESTORED_HEADER):s].strip()
    summary = content[s + len(SUMMARY_HEADER):].strip()
    return restored, summary


def read_toml(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise RestorerConfigurationError(f"{path}: {exc}") from None


@functools.lru_cache(maxsize=None)
def default_dictionary_path() -> str:
    return str(resources.files("promptdp") / "data" / "english_words.txt")


@dataclass(frozen=True)
class RestorerConfig:
    kind: str = "mock"
    endpoint_url: str | None = None
    model_name: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    max_retries: int = 3
    request_timeout: float = 60.0
    max_concurrent_requests: int = 4
    temperature: float = 0.0
    dictionary_path: str | None = None
    mode: str = "unified"
    backoff_base: float = 1.0
    backoff_max: float = 30.0

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise RestorerConfigurationError(f"unknown restorer kind {self.kind!r}")
        if self.kind == "remote" and (not self.endpoint_url or not self.model_name):
            raise RestorerConfigurationError("remote restorer needs endpoint_url and model_name")
        if self.kind == "mock" and self.dictionary_path is None:
            object.__setattr__(self, "dictionary_path", default_dictionary_path())
        if self.max_concurrent_requests < 1:
            raise RestorerConfigurationError("max_concurrent_requests must be at least 1")
        if self.max_retries < 0:
            raise RestorerConfigurationError("max_retries must be nonnegative")
        if self.mode not in MODES:
            raise RestorerConfigurationError(f"unknown prompt mode {self.mode!r}")

    @classmethod
    def from_mapping(cls, data: dict) -> "RestorerConfig":
        data = dict(data.get("restorer", data))
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise RestorerConfigurationError(f"unknown restorer settings: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_toml(cls, path) -> "RestorerConfig":
        return cls.from_mapping(read_toml(path))

    def to_json(self) -> dict:
        """Settings safe to record in a manifest (the key itself is never stored)."""
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class RestorationResult:
    source_id: str
    restored_text: str
    summary: str
    pass_index: int
    raw_response: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.pass_index not in (1, 2):
            raise ValueError(f"pass_index must be 1 or 2, got {self.pass_index}")

    def to_json(self) -> dict:
        return {"id": self.source_id, "pass_index": self.pass_index,
                "restored_text": self.restored_text, "summary": self.summary}


def load_dictionary(path) -> list[str]:
    words = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            w = line.strip()
            if w and not any(c.isspace() for c in w) and w not in seen:
                seen.add(w)
                words.append(w)
    return words


class MockRestorer:
    """Hamming-nearest same-length dictionary lookup."""

    def __init__(self, words: Iterable[str]):
        buckets: dict[int, list[str]] = {}
        for w in set(words):
            buckets.setdefault(len(w), []).append(w)
        self._words = {n: sorted(ws) for n, ws in buckets.items()}
        self._codes = {
            n: np.array([[ord(c) for c in w] for w in ws], dtype=np.uint32)
            for n, ws in self._words.items()
        }

    @classmethod
    @functools.lru_cache(maxsize=8)
    def from_file(cls, path) -> "MockRestorer":
        return cls(load_dictionary(path))

    def restore_word(self, word: str) -> str:
        n = len(word)
        codes = self._codes.get(n)
        if codes is None or n == 0:
            return word
        dist = (codes != np.array([ord(c) for c in word], dtype=np.uint32)).sum(axis=1)
        best = int(np.argmin(dist))  # first minimum = lexicographically smallest
        if dist[best] > math.ceil(n / 2):
            return word
        return self._words[n][best]

    def restore_text(self, text: str) -> str:
        tokens, gaps = split_layout(text)
        return detokenize([self.restore_word(t.text) for t in tokens], gaps)


def mock_dictionary_restore(token: Token | str, dictionary) -> Token | str:
    """Replace ``token`` by its nearest same-length dictionary word, if one is close enough."""
    restorer = dictionary if isinstance(dictionary, MockRestorer) else MockRestorer(dictionary)
    if isinstance(token, str):
        return restorer.restore_word(token)
    return Token(restorer.restore_word(token.text), token.start_offset)


_TRANSIENT_STATUS = {408, 429}


class ChatCompletionsClient:
    """Minimal OpenAI-compatible chat-completions client with retry and backoff."""

    def __init__(self, config: RestorerConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if config.kind != "remote":
            raise RestorerConfigurationError("ChatCompletionsClient needs a remote restorer config")
        self.config = config
        self.sleep = sleep
        self.delays: list[float] = []
        url = config.endpoint_url.rstrip("/")
        self.url = url if url.endswith("/chat/completions") else url + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(headers=headers, timeout=config.request_timeout, transport=transport)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _backoff(self, attempt):
        return min(self.config.backoff_max, self.config.backoff_base * 2 ** attempt)

    def complete(self, messages: Sequence[dict]) -> tuple[str, Any]:
        """Send ``messages`` and return ``(content, raw_json)``."""
        body = {"model": self.config.model_name, "messages": list(messages),
                "temperature": self.config.temperature}
        last_error = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = self._backoff(attempt - 1)
                self.delays.append(delay)
                self.sleep(delay)
            try:
                resp = self._client.post(self.url, json=body)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = exc
                logger.warning("request to %s failed (%s), attempt %d", self.url, exc, attempt + 1)
                continue
            if resp.status_code >= 500 or resp.status_code in _TRANSIENT_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("request to %s returned %d, attempt %d", self.url, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise RestorerConfigurationError(f"endpoint rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                payload = resp.json()
            except ValueError:
                raise ProtocolError("response is not JSON", resp.text) from None
            try:
                content = payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                raise ProtocolError("response lacks choices[0].message.content", payload) from None
            if not isinstance(content, str):
                raise ProtocolError("message content is not a string", payload)
            return content, payload
        raise TransportError(f"giving up on {self.url} after {self.config.max_retries + 1} attempts: {last_error}")


def _source_text(perturbed, pass_index, previous):
    if not isinstance(perturbed, PerturbedDocument):
        raise TypeError("restore() only accepts PerturbedDocument inputs; refusing unperturbed text")
    if pass_index == 1:
        return perturbed.perturbed_text
    if pass_index == 2:
        if previous is None or previous.pass_index != 1 or previous.source_id != perturbed.source_id:
            raise ValueError("pass 2 needs the pass-1 RestorationResult of the same document")
        return previous.restored_text
    raise ValueError(f"pass_index must be 1 or 2, got {pass_index}")


def restore(perturbed: PerturbedDocument, config: RestorerConfig, pass_index: int = 1,
            previous: RestorationResult | None = None, client: ChatCompletionsClient | None = None) -> RestorationResult:
    """Restore one perturbed document.

    Pass 2 feeds the pass-1 restored text back through the same restorer.
    The mock restorer returns an empty summary.
    """
    text = _source_text(perturbed, pass_index, previous)
    if config.kind == "mock":
        restored = MockRestorer.from_file(config.dictionary_path).restore_text(text)
        return RestorationResult(perturbed.source_id, restored, "", pass_index)

    own_client = client is None
    client = client or ChatCompletionsClient(config)
    try:
        content, raw = client.complete(build_restoration_prompt(text, config.mode))
    finally:
        if own_client:
            client.close()
    if config.mode == "unified":
        restored, summary = parse_unified_response(content, raw)
    elif config.mode == "restore_only":
        restored, summary = content.strip(), ""
    else:
        restored, summary = text, content.strip()
    if not restored:
        raise ProtocolError("restorer returned empty text", raw)
    return RestorationResult(perturbed.source_id, restored, summary, pass_index, raw)


def restore_corpus(docs: Sequence[PerturbedDocument], config: RestorerConfig, passes: int = 1,
                   client: ChatCompletionsClient | None = None) -> dict[str, list[RestorationResult]]:
    """Restore many documents with at most ``max_concurrent_requests`` in flight.

    Returns the results of every pass keyed by document id.
    """
    if passes not in (1, 2):
        raise ValueError("passes must be 1 or 2")

    def one(doc):
        first = restore(doc, config, 1, client=client)
        results = [first]
        if passes == 2:
            results.append(restore(doc, config, 2, previous=first, client=client))
        return doc.source_id, results

    if config.kind == "mock" or config.max_concurrent_requests == 1:
        return dict(one(d) for d in docs)
    with ThreadPoolExecutor(max_workers=config.max_concurrent_requests) as pool:
        return dict(pool.map(one, docs))


def with_overrides(config: RestorerConfig, **overrides) -> RestorerConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
