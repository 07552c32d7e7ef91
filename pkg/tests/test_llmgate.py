import json
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

from iclner.corpus import EntitySpan, LabeledCorpus, Sentence, builtin_schema
from iclner.llmgate import (
    AuthFailure,
    CachingBackend,
    CompletionRequest,
    CompletionResponse,
    ConcurrencyLimiter,
    ContextOverflow,
    CopyMock,
    CountingBackend,
    OpenAICompletionBackend,
    OracleMock,
    OverpredictMock,
    RateLimited,
    ScriptedMock,
    Timeout,
    UnparseablePrompt,
    YesNoOracleMock,
    read_extraction_prompt,
    read_verification_prompt,
)
from iclner.promptkit import (
    Demonstration,
    PromptSpec,
    render_extraction_prompt,
    render_verification_prompt,
)

SCHEMA = builtin_schema("conll2003")


def make_corpus():
    s0 = Sentence(0, tuple("Rare Hendrix song sells for $ 17".split()))
    s1 = Sentence(1, tuple("Columbus is a city".split()))
    s2 = Sentence(2, tuple("Only France and Britain backed Fischler 's proposal".split()))
    gold = {
        0: (EntitySpan.from_range(s0, 1, 1, "PER"),),
        1: (EntitySpan.from_range(s1, 0, 0, "LOC"),),
        2: (
            EntitySpan.from_range(s2, 1, 1, "LOC"),
            EntitySpan.from_range(s2, 3, 3, "LOC"),
            EntitySpan.from_range(s2, 5, 5, "PER"),
        ),
    }
    return LabeledCorpus(sentences=(s0, s1, s2), gold=gold, mode="flat")


CORPUS = make_corpus()


def extraction_prompt(query, type_name="LOC", demos=()):
    spec = PromptSpec(
        entity_type=SCHEMA.get(type_name), demos=tuple(demos), query=query
    )
    return render_extraction_prompt(spec)


def verification_prompt(sentence, word, type_name="LOC"):
    return render_verification_prompt(SCHEMA.get(type_name), [], sentence, word)


class FakeResponse:
    def __init__(self, status_code, payload=None, text=None):
        self.status_code = status_code
        self._payload = payload
        self.text = text if text is not None else (json.dumps(payload) if payload else "")

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    def __init__(self, script):
        self.script = list(script)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        item = self.script.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def ok(text="hello"):
    return FakeResponse(200, {"choices": [{"text": text}]})


def make_backend(script, **kwargs):
    session = FakeSession(script)
    backend = OpenAICompletionBackend(
        "https://fake.test/v1", "sk-test", "davinci-003", session=session, **kwargs
    )
    sleeps = []
    backend._sleep = sleeps.append
    return backend, session, sleeps


class TestHttpBackend:
    def test_success_and_wire_shape(self):
        backend, session, _ = make_backend([ok("out")])
        resp = backend.complete(CompletionRequest(prompt="p"))
        assert resp.text == "out"
        assert resp.cached is False
        post = session.posts[0]
        assert post["url"] == "https://fake.test/v1/completions"
        assert post["headers"]["Authorization"] == "Bearer sk-test"
        assert post["json"] == {
            "model": "davinci-003",
            "prompt": "p",
            "max_tokens": 512,
            "temperature": 0.0,
            "top_p": 1.0,
            "frequency_penalty": 0.0,
            "presence_penalty": 0.0,
            "best_of": 1,
        }

    def test_rate_limit_retries_then_succeeds(self):
        backend, session, sleeps = make_backend([FakeResponse(429), ok()])
        resp = backend.complete(CompletionRequest(prompt="p"))
        assert resp.text == "hello"
        assert len(session.posts) == 2
        assert sleeps == [0.5]

    def test_rate_limit_exhausts(self):
        backend, session, sleeps = make_backend(
            [FakeResponse(429)] * 3, max_attempts=3
        )
        with pytest.raises(RateLimited):
            backend.complete(CompletionRequest(prompt="p"))
        assert len(session.posts) == 3
        assert sleeps == [0.5, 1.0]

    def test_auth_failure_no_retry(self):
        backend, session, _ = make_backend([FakeResponse(401)])
        with pytest.raises(AuthFailure):
            backend.complete(CompletionRequest(prompt="p"))
        assert len(session.posts) == 1

    def test_context_overflow_detected(self):
        backend, _, _ = make_backend(
            [FakeResponse(400, text="this model's maximum context length is 4097 tokens")]
        )
        with pytest.raises(ContextOverflow):
            backend.complete(CompletionRequest(prompt="p"))

    def test_plain_400_is_generic(self):
        backend, _, _ = make_backend([FakeResponse(400, text="bad params")])
        with pytest.raises(Exception) as err:
            backend.complete(CompletionRequest(prompt="p"))
        assert not isinstance(err.value, ContextOverflow)

    def test_timeout_retried(self):
        backend, session, _ = make_backend([requests.Timeout(), ok()])
        assert backend.complete(CompletionRequest(prompt="p")).text == "hello"
        assert len(session.posts) == 2

    def test_timeout_exhausts(self):
        backend, _, _ = make_backend([requests.Timeout()] * 2, max_attempts=2)
        with pytest.raises(Timeout):
            backend.complete(CompletionRequest(prompt="p"))

    def test_server_error_retried(self):
        backend, _, _ = make_backend([FakeResponse(500), ok()])
        assert backend.complete(CompletionRequest(prompt="p")).text == "hello"

    def test_malformed_body(self):
        backend, _, _ = make_backend([FakeResponse(200, {"nope": 1})])
        with pytest.raises(Exception, match="malformed"):
            backend.complete(CompletionRequest(prompt="p"))

    def test_request_model_overrides_default(self):
        backend, session, _ = make_backend([ok()])
        backend.complete(CompletionRequest(prompt="p", model="other"))
        assert session.posts[0]["json"]["model"] == "other"

    def test_from_env(self, monkeypatch):
        monkeypatch.delenv("ICLNER_API_KEY", raising=False)
        with pytest.raises(Exception, match="ICLNER_API_KEY"):
            OpenAICompletionBackend.from_env("m")
        monkeypatch.setenv("ICLNER_API_KEY", "sk-x")
        monkeypatch.setenv("ICLNER_API_BASE", "https://alt.test/v2")
        backend = OpenAICompletionBackend.from_env("m")
        assert backend.base_url == "https://alt.test/v2"
        assert backend.api_key == "sk-x"


class TestRequestType:
    def test_defaults(self):
        r = CompletionRequest(prompt="p")
        assert (r.max_tokens, r.temperature, r.top_p) == (512, 0.0, 1.0)
        assert (r.frequency_penalty, r.presence_penalty, r.best_of) == (0.0, 0.0, 1)

    def test_empty_prompt_rejected(self):
        with pytest.raises(Exception):
            CompletionRequest(prompt="")

    def test_negative_temperature_rejected(self):
        with pytest.raises(Exception):
            CompletionRequest(prompt="p", temperature=-0.1)

    @given(
        st.text(min_size=1, max_size=40),
        st.integers(1, 2048),
        st.floats(0, 2, allow_nan=False),
        st.integers(1, 4),
    )
    @settings(max_examples=60, deadline=None)
    def test_wire_round_trip(self, prompt, max_tokens, temperature, best_of):
        r = CompletionRequest(
            prompt=prompt, max_tokens=max_tokens, temperature=temperature, best_of=best_of
        )
        assert CompletionRequest.from_wire(r.to_wire()) == r

    def test_from_wire_rejects_unknown_fields(self):
        with pytest.raises(Exception, match="unknown wire fields"):
            CompletionRequest.from_wire({"prompt": "p", "stream": True})

    def test_cache_key_sensitivity(self):
        a = CompletionRequest(prompt="p")
        assert a.cache_key() == CompletionRequest(prompt="p").cache_key()
        assert a.cache_key() != CompletionRequest(prompt="q").cache_key()
        assert a.cache_key() != CompletionRequest(prompt="p", max_tokens=64).cache_key()


class TestPromptReaders:
    def test_extraction_round_trip(self):
        demos = [Demonstration("Columbus is a city", "@@Columbus## is a city")]
        prompt = extraction_prompt("Rare Hendrix song sells for $ 17", "LOC", demos)
        description, query = read_extraction_prompt(prompt)
        assert description == "location"
        assert query == "Rare Hendrix song sells for $ 17"

    def test_verification_round_trip(self):
        prompt = verification_prompt("Columbus is a city", "Columbus", "LOC")
        description, sentence, word = read_verification_prompt(prompt)
        assert (description, sentence, word) == ("location", "Columbus is a city", "Columbus")

    def test_garbage_rejected(self):
        with pytest.raises(UnparseablePrompt):
            read_extraction_prompt("what even is this")
        with pytest.raises(UnparseablePrompt):
            read_verification_prompt("nope\nstill nope\nno")


class TestMocks:
    def test_copy_mock(self):
        mock = CopyMock()
        resp = mock.complete(CompletionRequest(prompt=extraction_prompt("Columbus is a city")))
        assert resp.text == "Columbus is a city"

    def test_copy_mock_unparseable(self):
        with pytest.raises(UnparseablePrompt):
            CopyMock().complete(CompletionRequest(prompt="hi"))

    def test_oracle_mock_marks_gold(self):
        mock = OracleMock(CORPUS, SCHEMA)
        resp = mock.complete(
            CompletionRequest(prompt=extraction_prompt("Columbus is a city", "LOC"))
        )
        assert resp.text == "@@Columbus## is a city"

    def test_oracle_mock_copies_when_no_entities(self):
        mock = OracleMock(CORPUS, SCHEMA)
        resp = mock.complete(
            CompletionRequest(prompt=extraction_prompt("Columbus is a city", "PER"))
        )
        assert resp.text == "Columbus is a city"

    def test_oracle_mock_multiple_entities(self):
        mock = OracleMock(CORPUS, SCHEMA)
        resp = mock.complete(
            CompletionRequest(
                prompt=extraction_prompt(
                    "Only France and Britain backed Fischler 's proposal", "LOC"
                )
            )
        )
        assert resp.text == "Only @@France## and @@Britain## backed Fischler 's proposal"

    def test_oracle_mock_unknown_sentence(self):
        mock = OracleMock(CORPUS, SCHEMA)
        with pytest.raises(UnparseablePrompt):
            mock.complete(CompletionRequest(prompt=extraction_prompt("not in corpus")))

    def test_oracle_mock_other_formats(self):
        mock = OracleMock(CORPUS, SCHEMA, format="bmes")
        resp = mock.complete(
            CompletionRequest(prompt=extraction_prompt("Columbus is a city", "LOC"))
        )
        assert resp.text == "S-LOC O O O"
        mock = OracleMock(CORPUS, SCHEMA, format="entpos")
        resp = mock.complete(
            CompletionRequest(prompt=extraction_prompt("Columbus is a city", "LOC"))
        )
        assert resp.text == "Columbus (0)"

    def test_overpredict_rate_one_wraps_all_eligible(self):
        mock = OverpredictMock(CORPUS, SCHEMA, extra_rate=1.0, seed=7)
        resp = mock.complete(
            CompletionRequest(prompt=extraction_prompt("Rare Hendrix song sells for $ 17", "LOC"))
        )
        # Hendrix is a gold PER token, never wrapped; Rare is fair game
        assert resp.text == "@@Rare## Hendrix song sells for $ 17"

    def test_overpredict_rate_zero_is_gold(self):
        mock = OverpredictMock(CORPUS, SCHEMA, extra_rate=0.0, seed=7)
        oracle = OracleMock(CORPUS, SCHEMA)
        for query, t in [("Columbus is a city", "LOC"), ("Rare Hendrix song sells for $ 17", "PER")]:
            p = CompletionRequest(prompt=extraction_prompt(query, t))
            assert mock.complete(p).text == oracle.complete(p).text

    def test_overpredict_deterministic_across_instances_and_order(self):
        prompts = [
            CompletionRequest(prompt=extraction_prompt(s.text(), t))
            for s in CORPUS
            for t in ("LOC", "PER", "ORG", "MISC")
        ]
        a = OverpredictMock(CORPUS, SCHEMA, extra_rate=0.5, seed=3)
        b = OverpredictMock(CORPUS, SCHEMA, extra_rate=0.5, seed=3)
        first = [a.complete(p).text for p in prompts]
        second = [b.complete(p).text for p in reversed(prompts)]
        assert first == list(reversed(second))

    def test_overpredict_keeps_gold(self):
        mock = OverpredictMock(CORPUS, SCHEMA, extra_rate=1.0, seed=1)
        resp = mock.complete(
            CompletionRequest(
                prompt=extraction_prompt("Only France and Britain backed Fischler 's proposal", "LOC")
            )
        )
        assert "@@France##" in resp.text and "@@Britain##" in resp.text
        # gold PER token is off-limits even for another type's prompt
        assert "@@Fischler##" not in resp.text

    def test_yesno_oracle(self):
        mock = YesNoOracleMock(CORPUS, SCHEMA)
        yes = mock.complete(
            CompletionRequest(
                prompt=verification_prompt("Rare Hendrix song sells for $ 17", "Hendrix", "PER")
            )
        )
        no = mock.complete(
            CompletionRequest(
                prompt=verification_prompt("Rare Hendrix song sells for $ 17", "Hendrix", "LOC")
            )
        )
        assert (yes.text, no.text) == ("Yes", "No")

    def test_scripted_mock(self, tmp_path):
        p = tmp_path / "script.json"
        p.write_text(json.dumps({"ping": "pong"}), encoding="utf-8")
        mock = ScriptedMock.from_json(p)
        assert mock.complete(CompletionRequest(prompt="ping")).text == "pong"
        with pytest.raises(UnparseablePrompt):
            mock.complete(CompletionRequest(prompt="pang"))


class TestCaching:
    def test_hit_after_miss(self, tmp_path):
        counting = CountingBackend(ScriptedMock({"p": "out"}))
        cache = CachingBackend(counting, tmp_path / "cache")
        r1 = cache.complete(CompletionRequest(prompt="p"))
        r2 = cache.complete(CompletionRequest(prompt="p"))
        assert (r1.cached, r2.cached) == (False, True)
        assert r1.text == r2.text == "out"
        assert counting.calls == 1
        assert (cache.hits, cache.misses) == (1, 1)

    def test_cache_survives_new_instance(self, tmp_path):
        d = tmp_path / "cache"
        CachingBackend(ScriptedMock({"p": "out"}), d).complete(CompletionRequest(prompt="p"))
        counting = CountingBackend(ScriptedMock({"p": "out"}))
        cache2 = CachingBackend(counting, d)
        resp = cache2.complete(CompletionRequest(prompt="p"))
        assert resp.cached is True
        assert counting.calls == 0

    def test_different_params_different_entries(self, tmp_path):
        counting = CountingBackend(ScriptedMock({"p": "out"}))
        cache = CachingBackend(counting, tmp_path)
        cache.complete(CompletionRequest(prompt="p"))
        cache.complete(CompletionRequest(prompt="p", max_tokens=64))
        assert counting.calls == 2

    def test_corrupt_entry_refetched(self, tmp_path):
        counting = CountingBackend(ScriptedMock({"p": "out"}))
        cache = CachingBackend(counting, tmp_path)
        cache.complete(CompletionRequest(prompt="p"))
        key = CompletionRequest(prompt="p").cache_key()
        (tmp_path / f"{key}.json").write_text("{garbage", encoding="utf-8")
        resp = cache.complete(CompletionRequest(prompt="p"))
        assert resp.text == "out"
        assert counting.calls == 2

    def test_concurrent_completions(self, tmp_path):
        cache = CachingBackend(ScriptedMock({f"p{i}": str(i) for i in range(40)}), tmp_path)
        with ThreadPoolExecutor(max_workers=8) as pool:
            texts = list(
                pool.map(
                    lambda i: cache.complete(CompletionRequest(prompt=f"p{i % 40}")).text,
                    range(160),
                )
            )
        assert texts == [str(i % 40) for i in range(160)]


class TestConcurrencyLimiter:
    def test_bound_respected(self):
        counting = CountingBackend(ScriptedMock({"p": "x"}), delay=0.01)
        limited = ConcurrencyLimiter(counting, max_in_flight=3)
        with ThreadPoolExecutor(max_workers=10) as pool:
            list(pool.map(lambda _: limited.complete(CompletionRequest(prompt="p")), range(30)))
        assert counting.calls == 30
        assert counting.peak_in_flight <= 3

    def test_bad_bound(self):
        with pytest.raises(Exception):
            ConcurrencyLimiter(ScriptedMock({}), 0)
