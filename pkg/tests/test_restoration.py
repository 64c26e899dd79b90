import json
import math

import httpx
import numpy as np
import pytest

from promptdp.errors import ProtocolError, RestorerConfigurationError, TransportError
from promptdp.mechanism import PerturbationParams, PerturbedDocument, perturb_document
from promptdp.restoration import (RESTORE_ONLY_PROMPT, SUMMARIZE_ONLY_PROMPT, SYSTEM_PROMPT, ChatCompletionsClient,
                                  MockRestorer, RestorationResult, RestorerConfig, build_restoration_prompt,
                                  default_dictionary_path, load_dictionary, mock_dictionary_restore,
                                  parse_unified_response, restore, restore_corpus)
from promptdp.synthetic import mixed_corpus
from promptdp.text import AnnotatedDocument, Token

EXPECTED_SYSTEM_PROMPT = (
    "You are a text restoration and summarization assistant.\n"
    "First, correct only the errors introduced by distortion/noise. Do not make any unnecessary changes. "
    "Preserve the original wording, punctuation, capitalization, and formatting as much as possible.\n"
    "Second, create a concise and accurate summary of the restored text. Focus on the main ideas and key "
    "details, and avoid unnecessary details. Do not add opinions or any prefacing."
)


def _perturbed(text, eps=5.5, seed=0, doc_id="d"):
    return PerturbedDocument.from_text(doc_id, text, PerturbationParams(eps, 94, seed))


def test_system_prompt_is_verbatim():
    assert SYSTEM_PROMPT == EXPECTED_SYSTEM_PROMPT
    assert SYSTEM_PROMPT.count("\n") == 2


def test_prompt_modes():
    text = "Pje2$e c4pq a d&ctBr"
    unified = build_restoration_prompt(text)
    assert unified[0] == {"role": "system", "content": SYSTEM_PROMPT}
    assert unified[1]["role"] == "user" and unified[1]["content"].endswith(text)
    assert build_restoration_prompt(text, None) == unified

    ro = build_restoration_prompt(text, "restore_only")
    assert ro[0]["content"] == RESTORE_ONLY_PROMPT
    assert "summary" not in ro[0]["content"].lower()
    assert ro[1]["content"] == text
    so = build_restoration_prompt(text, "summarize_only")
    assert so[0]["content"] == SUMMARIZE_ONLY_PROMPT
    with pytest.raises(ValueError):
        build_restoration_prompt(text, "translate")


def test_parse_unified_response():
    restored, summary = parse_unified_response("RESTORED:\nPlease call a doctor\nSUMMARY:\nA doctor is needed.")
    assert restored == "Please call a doctor"
    assert summary == "A doctor is needed."
    with pytest.raises(ProtocolError) as info:
        parse_unified_response("just some text", {"raw": 1})
    assert info.value.raw_payload == {"raw": 1}


def test_mock_prefers_lexicographically_smallest_tie():
    assert mock_dictionary_restore("c4ll", ["tall", "cell", "call"]) == "call"
    tok = mock_dictionary_restore(Token("c4ll", 3), ["call"])
    assert tok == Token("call", 3)


def test_mock_bundled_dictionary_examples():
    r = MockRestorer.from_file(default_dictionary_path())
    assert r.restore_word("cbrr/MpondenXe") == "correspondence"
    assert r.restore_word("d&ctBr") == "doctor"
    # distance to every 5-letter word exceeds ceil(5/2)
    assert r.restore_word("Xq#Zw") == "Xq#Zw"
    assert r.restore_word("") == ""


def test_mock_distance_threshold():
    r = MockRestorer(["abcdef"])
    assert r.restore_word("abcXYZ") == "abcdef"   # 3 = ceil(6/2)
    assert r.restore_word("abWXYZ") == "abWXYZ"   # 4 > 3
    assert r.restore_word("abcde") == "abcde"     # no word of that length


def test_mock_leaves_dictionary_words_alone():
    words = load_dictionary(default_dictionary_path())
    r = MockRestorer(words)
    sample = words[::997]
    assert [r.restore_word(w) for w in sample] == sample


def test_mock_restore_is_idempotent_and_pass2_is_fixed_point():
    cfg = RestorerConfig()
    pd = _perturbed("Please call a doctor,\nthen rest.  Thanks", eps=4.0, seed=3)
    first = restore(pd, cfg)
    second = restore(pd, cfg, 2, previous=first)
    assert first.pass_index == 1 and second.pass_index == 2
    assert second.restored_text == first.restored_text
    assert first.summary == ""
    # whitespace layout is kept
    assert first.restored_text.count("\n") == 1 and "  " in first.restored_text


def test_restore_rejects_raw_text():
    doc = AnnotatedDocument.from_text("x", "secret text")
    with pytest.raises(TypeError):
        restore(doc, RestorerConfig())
    with pytest.raises(TypeError):
        restore("secret text", RestorerConfig())


def test_pass2_needs_matching_previous():
    pd = _perturbed("abc def")
    with pytest.raises(ValueError):
        restore(pd, RestorerConfig(), 2)
    other = RestorationResult("other", "x", "", 1)
    with pytest.raises(ValueError):
        restore(pd, RestorerConfig(), 2, previous=other)


def test_config_validation(tmp_path):
    with pytest.raises(RestorerConfigurationError):
        RestorerConfig(kind="remote")
    with pytest.raises(RestorerConfigurationError):
        RestorerConfig(kind="oracle")
    with pytest.raises(RestorerConfigurationError):
        RestorerConfig.from_mapping({"kind": "mock", "colour": "blue"})
    p = tmp_path / "r.toml"
    p.write_text('[restorer]\nkind = "remote"\nendpoint_url = "http://x/v1"\nmodel_name = "m"\nmax_retries = 5\n')
    cfg = RestorerConfig.from_toml(p)
    assert cfg.kind == "remote" and cfg.max_retries == 5 and cfg.temperature == 0.0


# -- remote client against a fake endpoint ---------------------------------------------------

def _remote(**kw):
    base = dict(kind="remote", endpoint_url="http://fake/v1", model_name="test-model", backoff_base=0.5)
    base.update(kw)
    return RestorerConfig(**base)


def _ok(content):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


class Recorder:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        r = self.responses.pop(0)
        if isinstance(r, Exception):
            raise r
        return r


def test_remote_unified_round_trip(monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
    rec = Recorder([_ok("RESTORED:\nPlease call a doctor\nSUMMARY:\nCall a doctor.")])
    client = ChatCompletionsClient(_remote(), transport=httpx.MockTransport(rec), sleep=lambda s: None)
    res = restore(_perturbed("Pje2$e c4pq a d&ctBr"), _remote(), client=client)
    assert res.restored_text == "Please call a doctor" and res.summary == "Call a doctor."
    [req] = rec.requests
    assert str(req.url) == "http://fake/v1/chat/completions"
    assert req.headers["Authorization"] == "Bearer sk-test"
    body = json.loads(req.content)
    assert body["model"] == "test-model" and body["temperature"] == 0.0
    assert body["messages"][0]["content"] == SYSTEM_PROMPT


def test_remote_retries_5xx_with_growing_delays():
    rec = Recorder([httpx.Response(503), httpx.Response(500), httpx.Response(502), _ok("RESTORED: a SUMMARY: b")])
    slept = []
    client = ChatCompletionsClient(_remote(max_retries=3), transport=httpx.MockTransport(rec), sleep=slept.append)
    content, _ = client.complete([{"role": "user", "content": "x"}])
    assert content == "RESTORED: a SUMMARY: b"
    assert slept == client.delays == [0.5, 1.0, 2.0]
    assert all(b >= a for a, b in zip(slept, slept[1:]))


def test_remote_gives_up_after_max_retries():
    rec = Recorder([httpx.Response(500)] * 3)
    client = ChatCompletionsClient(_remote(max_retries=2), transport=httpx.MockTransport(rec), sleep=lambda s: None)
    with pytest.raises(TransportError):
        client.complete([])
    assert len(rec.requests) == 3


def test_remote_retries_timeouts_and_rate_limits():
    rec = Recorder([httpx.ReadTimeout("slow"), httpx.Response(429), _ok("hi")])
    client = ChatCompletionsClient(_remote(), transport=httpx.MockTransport(rec), sleep=lambda s: None)
    assert client.complete([])[0] == "hi"
    assert len(rec.requests) == 3


def test_remote_4xx_is_not_retried():
    rec = Recorder([httpx.Response(401, text="bad key"), _ok("never")])
    client = ChatCompletionsClient(_remote(), transport=httpx.MockTransport(rec), sleep=lambda s: None)
    with pytest.raises(RestorerConfigurationError, match="401"):
        client.complete([])
    assert len(rec.requests) == 1


def test_remote_missing_headers_keeps_raw_payload():
    rec = Recorder([_ok("Here is your text: Please call a doctor")])
    client = ChatCompletionsClient(_remote(), transport=httpx.MockTransport(rec), sleep=lambda s: None)
    with pytest.raises(ProtocolError) as info:
        restore(_perturbed("abc"), _remote(), client=client)
    assert info.value.raw_payload["choices"][0]["message"]["content"].startswith("Here is")


def test_remote_schema_mismatch():
    rec = Recorder([httpx.Response(200, json={"result": "x"}), httpx.Response(200, text="<html>")])
    client = ChatCompletionsClient(_remote(), transport=httpx.MockTransport(rec), sleep=lambda s: None)
    with pytest.raises(ProtocolError):
        client.complete([])
    with pytest.raises(ProtocolError):
        client.complete([])


def test_remote_restore_only_mode_and_corpus():
    cfg = _remote(mode="restore_only", max_concurrent_requests=3)

    def handler(request):
        text = json.loads(request.content)["messages"][1]["content"]
        return _ok(text.upper())

    client = ChatCompletionsClient(cfg, transport=httpx.MockTransport(handler))
    docs = [_perturbed(f"word{i} x", doc_id=f"d{i}") for i in range(6)]
    out = restore_corpus(docs, cfg, passes=2, client=client)
    assert sorted(out) == [f"d{i}" for i in range(6)]
    for d in docs:
        first, second = out[d.source_id]
        assert first.restored_text == d.perturbed_text.upper()
        assert second.restored_text == first.restored_text.upper()


def test_dictionary_words_restored_far_more_than_random_strings():
    rng = np.random.default_rng(11)
    docs = mixed_corpus(300, rng)
    for eps in (6.0, 8.0):
        params = PerturbationParams(eps, 94, 5)
        restored = restore_corpus([perturb_document(d, params) for d in docs], RestorerConfig())
        word_hits = rand_hits = 0
        expected = var = 0.0
        for d in docs:
            new = restored[d.id][0].restored_text.split(" ")
            for i, tok in enumerate(d.tokens):
                hit = new[i] == tok.text
                if i % 2:
                    rand_hits += hit
                    q = (1 - params.gamma) ** tok.length
                    expected += q
                    var += q * (1 - q)
                else:
                    word_hits += hit
        assert word_hits > rand_hits
        # random strings come back only when untouched
        assert abs(rand_hits - expected) <= 3 * math.sqrt(var)
