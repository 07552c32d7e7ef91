"""Completion backends behind one interface.

One real backend speaks HTTP to an OpenAI-compatible completions endpoint
with the fixed decoding parameters (greedy, 512 output tokens). Everything
else is a deterministic mock that reads the rendered prompt text back
through the frozen templates, which makes offline end-to-end runs exact:
OracleMock answers with gold annotations, OverpredictMock adds seeded
spurious entities, YesNoOracleMock answers verification questions from
gold, CopyMock echoes the query, ScriptedMock replays a fixture map.

Wrappers compose around any backend: CachingBackend persists responses
content-addressed by request hash (atomic writes, safe to re-run),
ConcurrencyLimiter bounds in-flight calls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import requests

from . import promptkit
from .corpus import EntitySpan, LabeledCorpus, SchemaSet
from .errors import BackendError, ConfigError
from .markup import ATMARKER, encode, outermost_spans

log = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 512
DEFAULT_TEMPERATURE = 0.0
DEFAULT_TOP_P = 1.0
DEFAULT_FREQUENCY_PENALTY = 0.0
DEFAULT_PRESENCE_PENALTY = 0.0
DEFAULT_BEST_OF = 1

ENV_API_KEY = "ICLNER_API_KEY"
ENV_API_BASE = "ICLNER_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"

WIRE_FIELDS = (
    "model",
    "prompt",
    "max_tokens",
    "temperature",
    "top_p",
    "frequency_penalty",
    "presence_penalty",
    "best_of",
)


class Timeout(BackendError):
    pass


class RateLimited(BackendError):
    pass


class AuthFailure(BackendError):
    pass


class ContextOverflow(BackendError):
    pass


class UnparseablePrompt(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY
    presence_penalty: float = DEFAULT_PRESENCE_PENALTY
    best_of: int = DEFAULT_BEST_OF
    model: str | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise BackendError("empty prompt")
        if self.temperature < 0:
            raise BackendError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise BackendError(f"max_tokens must be positive, got {self.max_tokens}")

    def to_wire(self, default_model: str | None = None) -> dict:
        """JSON body for the completions endpoint, fields in wire order."""
        model = self.model if self.model is not None else default_model
        body = {
            "model": model,
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "frequency_penalty": self.frequency_penalty,
            "presence_penalty": self.presence_penalty,
            "best_of": self.best_of,
        }
        return body

    @classmethod
    def from_wire(cls, body: dict) -> "CompletionRequest":
        extra = set(body) - set(WIRE_FIELDS)
        if extra:
            raise BackendError(f"unknown wire fields {sorted(extra)}")
        kwargs = dict(body)
        model = kwargs.pop("model", None)
        try:
            return cls(model=model, **kwargs)
        except TypeError as exc:
            raise BackendError(f"bad wire body: {exc}") from exc

    def cache_key(self) -> str:
        canonical = json.dumps(self.to_wire(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    backend_id: str
    cached: bool = False
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.latency_ms < 0:
            raise BackendError("negative latency")


class Backend:
    """Interface: a backend_id string and complete(request) -> response."""

    backend_id = "backend"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


class OpenAICompletionBackend(Backend):
    """POSTs to {base_url}/completions with bearer auth.

    Retries RateLimited, timeouts, connection drops and 5xx with exponential
    backoff up to max_attempts; AuthFailure and ContextOverflow are raised
    immediately. An optional requests_per_second cap spaces calls out
    process-globally for this instance.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str,
        model: str,
        *,
        max_attempts: int = 4,
        timeout: float = 60.0,
        backoff: float = 0.5,
        requests_per_second: float | None = None,
        session=None,
    ):
        if not base_url:
            raise ConfigError("empty base_url")
        if not model:
            raise ConfigError("empty model name")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.max_attempts = max(1, max_attempts)
        self.timeout = timeout
        self.backoff = backoff
        self.min_interval = 1.0 / requests_per_second if requests_per_second else 0.0
        self.session = session if session is not None else requests.Session()
        self.backend_id = f"openai:{model}"
        self._sleep = time.sleep
        self._pace_lock = threading.Lock()
        self._last_call = 0.0

    @classmethod
    def from_env(cls, model: str, **kwargs) -> "OpenAICompletionBackend":
        key = os.environ.get(ENV_API_KEY)
        if not key:
            raise ConfigError(f"{ENV_API_KEY} is not set")
        base = os.environ.get(ENV_API_BASE, DEFAULT_API_BASE)
        return cls(base, key, model, **kwargs)

    def _pace(self) -> None:
        if self.min_interval <= 0:
            return
        with self._pace_lock:
            wait = self._last_call + self.min_interval - time.monotonic()
            if wait > 0:
                self._sleep(wait)
            self._last_call = time.monotonic()

    @staticmethod
    def _looks_like_overflow(text: str) -> bool:
        text = text.lower()
        needles = (
            "context length",
            "context_length",
            "maximum context",
            "too many tokens",
            "reduce the length",
        )
        return any(n in text for n in needles)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        url = f"{self.base_url}/completions"
        body = request.to_wire(default_model=self.model)
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: BackendError | None = None
        started = time.monotonic()
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1:
                self._sleep(self.backoff * 2 ** (attempt - 2))
            self._pace()
            try:
                resp = self.session.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.Timeout:
                last_error = Timeout(f"timeout after {self.timeout}s (attempt {attempt})")
                log.warning("%s", last_error)
                continue
            except requests.RequestException as exc:
                last_error = BackendError(f"transport error: {exc} (attempt {attempt})")
                log.warning("%s", last_error)
                continue
            if resp.status_code == 200:
                try:
                    text = resp.json()["choices"][0]["text"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"malformed response body: {exc}") from exc
                latency = int((time.monotonic() - started) * 1000)
                return CompletionResponse(
                    text=text, backend_id=self.backend_id, cached=False, latency_ms=latency
                )
            if resp.status_code in (401, 403):
                raise AuthFailure(f"auth rejected with status {resp.status_code}")
            if resp.status_code == 400 and self._looks_like_overflow(resp.text):
                raise ContextOverflow(f"endpoint rejected prompt length: {resp.text[:200]}")
            if resp.status_code == 429:
                last_error = RateLimited(f"rate limited (attempt {attempt})")
                log.warning("%s", last_error)
                continue
            if resp.status_code >= 500:
                last_error = BackendError(
                    f"server error {resp.status_code} (attempt {attempt})"
                )
                log.warning("%s", last_error)
                continue
            raise BackendError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        assert last_error is not None
        raise last_error


class CachingBackend(Backend):
    """Content-addressed response cache around any backend.

    Keys are the request hash; entries are JSON files written atomically
    (temp file then rename) so concurrent writers and killed runs leave no
    torn entries. Counts hits and misses for run manifests.
    """

    def __init__(self, inner: Backend, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.backend_id = inner.backend_id
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        key = request.cache_key()
        path = self._path(key)
        if path.exists():
            try:
                entry = json.loads(path.read_text(encoding="utf-8"))
                with self._lock:
                    self.hits += 1
                return CompletionResponse(
                    text=entry["text"],
                    backend_id=entry.get("backend_id", self.backend_id),
                    cached=True,
                    latency_ms=0,
                )
            except (ValueError, KeyError) as exc:
                log.warning("dropping corrupt cache entry %s: %s", path, exc)
                path.unlink(missing_ok=True)
        response = self.inner.complete(request)
        with self._lock:
            self.misses += 1
        entry = {"text": response.text, "backend_id": response.backend_id}
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise
        return response


class ConcurrencyLimiter(Backend):
    """Caps in-flight completions across threads."""

    def __init__(self, inner: Backend, max_in_flight: int):
        if max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.inner = inner
        self.backend_id = inner.backend_id
        self._sem = threading.BoundedSemaphore(max_in_flight)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._sem:
            return self.inner.complete(request)


# --- prompt readers shared by the mocks ------------------------------------

_EXTRACTION_HEADER_RE = re.compile(
    r"^I am an excellent linguist\. The task is to label (.+) entities "
    r"in the given sentence\. Below are some examples\.$"
)
_VERIFICATION_HEADER_RE = re.compile(
    r"^The task is to verify whether the word is a (.+) entity "
    r"extracted from the given sentence\.$"
)
_VERIFICATION_QUESTION_RE = re.compile(
    r'^Is the word "(.+)" in the input sentence a (.+) entity\? '
    r"Please answer with yes or no\.$"
)


def read_extraction_prompt(prompt: str) -> tuple[str, str]:
    """(entity description, query sentence text) from a rendered extraction
    prompt; UnparseablePrompt when it does not match the template."""
    lines = prompt.split("\n")
    if len(lines) < 3:
        raise UnparseablePrompt("extraction prompt too short")
    m = _EXTRACTION_HEADER_RE.match(lines[0])
    if not m:
        raise UnparseablePrompt(f"bad extraction header: {lines[0]!r}")
    if lines[-1] != "Output:" or not lines[-2].startswith("Input: "):
        raise UnparseablePrompt("extraction prompt does not end with a query block")
    return m.group(1), lines[-2][len("Input: ") :]


def read_verification_prompt(prompt: str) -> tuple[str, str, str]:
    """(entity description, sentence text, word) from a rendered
    verification prompt."""
    lines = prompt.split("\n")
    if len(lines) < 3:
        raise UnparseablePrompt("verification prompt too short")
    m = _VERIFICATION_HEADER_RE.match(lines[0])
    if not m:
        raise UnparseablePrompt(f"bad verification header: {lines[0]!r}")
    q = _VERIFICATION_QUESTION_RE.match(lines[-1])
    if not q or not lines[-2].startswith("The input sentence: "):
        raise UnparseablePrompt("verification prompt does not end with a question")
    if q.group(2) != m.group(1):
        raise UnparseablePrompt("question and header disagree on the entity type")
    return m.group(1), lines[-2][len("The input sentence: ") :], q.group(1)


class MockBackend(Backend):
    def __init__(self, corpus: LabeledCorpus, schema: SchemaSet):
        self.corpus = corpus
        self.schema = schema

    def _type_for(self, description: str):
        etype = self.schema.by_description(description)
        if etype is None:
            raise UnparseablePrompt(f"no entity type described as {description!r}")
        return etype

    def _sentence_for(self, text: str):
        sent = self.corpus.find_by_text(text)
        if sent is None:
            raise UnparseablePrompt(f"no corpus sentence reads {text!r}")
        return sent


class CopyMock(Backend):
    """Answers every extraction prompt by copying the query sentence: the
    no-entity output shape."""

    backend_id = "mock:copy"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        _, query = read_extraction_prompt(request.prompt)
        return CompletionResponse(text=query, backend_id=self.backend_id)


class OracleMock(MockBackend):
    """Answers extraction prompts with the gold encoding for the queried
    sentence and type. Nested same-type overlaps are encoded outermost-only
    (the marked text cannot express them)."""

    def __init__(self, corpus, schema, format: str = ATMARKER):
        super().__init__(corpus, schema)
        self.format = format
        self.backend_id = f"mock:oracle:{format}"

    def gold_answer(self, sentence_text: str, description: str) -> str:
        etype = self._type_for(description)
        sent = self._sentence_for(sentence_text)
        spans = list(self.corpus.spans_of(sent.id, etype.name))
        spans, reduced = outermost_spans(spans)
        if reduced:
            log.info(
                "sentence %d: nested %s golds reduced to outermost for encoding",
                sent.id,
                etype.name,
            )
        return encode(self.format, sent, spans).text

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        description, query = read_extraction_prompt(request.prompt)
        return CompletionResponse(
            text=self.gold_answer(query, description), backend_id=self.backend_id
        )


class OverpredictMock(MockBackend):
    """Gold answers plus seeded spurious entities.

    Wraps capitalized tokens that are not inside any gold span of any type,
    each with probability extra_rate, using a generator seeded from
    (seed, sentence id, type name) so results do not depend on call order.
    Marker format only.
    """

    def __init__(self, corpus, schema, extra_rate: float, seed: int):
        super().__init__(corpus, schema)
        if not 0.0 <= extra_rate <= 1.0:
            raise ConfigError(f"extra_rate must be in [0, 1], got {extra_rate}")
        self.extra_rate = extra_rate
        self.seed = seed
        self.backend_id = f"mock:overpredict:{extra_rate}:{seed}"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        description, query = read_extraction_prompt(request.prompt)
        etype = self._type_for(description)
        sent = self._sentence_for(query)
        gold_any = self.corpus.spans_of(sent.id)
        covered = set()
        for sp in gold_any:
            covered.update(range(sp.start, sp.end + 1))
        spans = list(self.corpus.spans_of(sent.id, etype.name))
        spans, _ = outermost_spans(spans)
        rng = random.Random(f"{self.seed}:{sent.id}:{etype.name}")
        for i, tok in enumerate(sent.tokens):
            if i in covered or not tok[:1].isupper():
                continue
            if rng.random() < self.extra_rate:
                spans.append(EntitySpan.from_range(sent, i, i, etype.name))
        spans.sort(key=lambda sp: sp.start)
        return CompletionResponse(
            text=encode(ATMARKER, sent, spans).text, backend_id=self.backend_id
        )


class YesNoOracleMock(MockBackend):
    """Answers verification prompts from gold: Yes iff the word is the
    surface of a gold span of the queried type in that sentence."""

    backend_id = "mock:yesno-oracle"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        description, sentence_text, word = read_verification_prompt(request.prompt)
        etype = self._type_for(description)
        sent = self._sentence_for(sentence_text)
        surfaces = {sp.surface for sp in self.corpus.spans_of(sent.id, etype.name)}
        answer = promptkit.YES if word in surfaces else promptkit.NO
        return CompletionResponse(text=answer, backend_id=self.backend_id)


class ScriptedMock(Backend):
    """Replays an exact prompt-to-completion map."""

    backend_id = "mock:scripted"

    def __init__(self, responses: dict[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_json(cls, path: str | Path) -> "ScriptedMock":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: scripted responses must be a JSON object")
        return cls(data)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if request.prompt not in self.responses:
            raise UnparseablePrompt("no scripted response for this prompt")
        return CompletionResponse(
            text=self.responses[request.prompt], backend_id=self.backend_id
        )


class CountingBackend(Backend):
    """Test instrumentation: counts calls and tracks peak concurrency."""

    def __init__(self, inner: Backend, delay: float = 0.0):
        self.inner = inner
        self.backend_id = inner.backend_id
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            return self.inner.complete(request)
        finally:
            with self._lock:
                self.in_flight -= 1


def request_with_prompt(request: CompletionRequest, prompt: str) -> CompletionRequest:
    return replace(request, prompt=prompt)
