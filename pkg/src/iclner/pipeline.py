"""Run orchestration: per-type extraction, verification, merging.

A run decomposes every test sentence into one extraction prompt per entity
type, parses the completions back into typed spans, optionally filters each
span through a yes/no verification prompt, and merges the per-type results
into one prediction set per sentence. Every stage is deterministic given the
config seed and a deterministic backend, so two identical runs produce
byte-identical prediction dumps.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import subprocess
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import markup, promptkit
from .corpus import (
    FLAT,
    NESTED,
    EntitySpan,
    EntityTypeSchema,
    LabeledCorpus,
    SchemaSet,
    Sentence,
    spans_overlap,
)
from .embedstore import (
    Datastore,
    SENTENCE_LEVEL,
    TOKEN_LEVEL,
    load_store,
    random_demos,
    read_emb1,
)
from .errors import ConfigError, DataError
from .llmgate import Backend, CompletionRequest, ContextOverflow
from .promptkit import Demonstration, NEAREST_LAST

RANDOM_RETRIEVAL = "random"
SENTENCE_RETRIEVAL = "sentence"
ENTITY_RETRIEVAL = "entity"
RETRIEVALS = (RANDOM_RETRIEVAL, SENTENCE_RETRIEVAL, ENTITY_RETRIEVAL)

VERIFY_OFF = "off"
VERIFY_ZERO_SHOT = "zero-shot"
VERIFY_FEW_SHOT = "few-shot"
VERIFICATIONS = (VERIFY_OFF, VERIFY_ZERO_SHOT, VERIFY_FEW_SHOT)

PREDICTED_ENTITIES = "predicted-entities"
ALL_TOKENS = "all-tokens"
TOKEN_QUERY_MODES = (PREDICTED_ENTITIES, ALL_TOKENS)

RAW = "raw"
VERIFIED = "verified"

# second-chance estimate when the endpoint rejects a prompt the 1.3
# tokens-per-word average let through
RETRIM_RATIO = 1.5


@dataclass(frozen=True)
class RunConfig:
    """Knobs for one run. ``fanout`` is the per-token neighbor count for
    entity-level retrieval (defaults to ``k`` when unset)."""

    retrieval: str = RANDOM_RETRIEVAL
    k: int = 8
    fanout: int | None = None
    format: str = markup.ATMARKER
    verification: str = VERIFY_OFF
    verification_k: int = 8
    token_query_mode: str = PREDICTED_ENTITIES
    demo_order: str = NEAREST_LAST
    seed: int = 0
    budget: int = promptkit.DEFAULT_BUDGET
    tokens_per_word: float = promptkit.DEFAULT_TOKENS_PER_WORD
    workers: int = 1

    def __post_init__(self) -> None:
        if self.retrieval not in RETRIEVALS:
            raise ConfigError(f"unknown retrieval strategy {self.retrieval!r}")
        if self.format not in markup.FORMATS:
            raise ConfigError(f"unknown output format {self.format!r}")
        if self.verification not in VERIFICATIONS:
            raise ConfigError(f"unknown verification mode {self.verification!r}")
        if self.token_query_mode not in TOKEN_QUERY_MODES:
            raise ConfigError(f"unknown token query mode {self.token_query_mode!r}")
        if self.demo_order not in promptkit.DEMO_ORDERS:
            raise ConfigError(f"unknown demo order {self.demo_order!r}")
        if self.k < 0:
            raise ConfigError(f"k must be non-negative, got {self.k}")
        if self.fanout is not None and self.fanout < 1:
            raise ConfigError(f"fanout must be positive, got {self.fanout}")
        if self.verification == VERIFY_FEW_SHOT and self.verification_k < 1:
            raise ConfigError(
                f"few-shot verification needs verification_k >= 1, got {self.verification_k}"
            )
        if self.budget < 1:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if self.tokens_per_word <= 0:
            raise ConfigError(f"tokens_per_word must be positive, got {self.tokens_per_word}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, object]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)  # type: ignore[arg-type]

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class StoreSet:
    """Retrieval context for a run: train-side stores to search plus
    test-side query vectors, all optional until the config needs them.
    ``candidate_tokens`` maps a test sentence id to the token indices a
    candidate recognizer flagged as likely entities."""

    train_sentence: Datastore | None = None
    train_token: Datastore | None = None
    test_sentence_vectors: Mapping[int, np.ndarray] | None = None
    test_token_vectors: Mapping[int, Mapping[int, np.ndarray]] | None = None
    candidate_tokens: Mapping[int, Sequence[int]] | None = None


def load_sentence_queries(path: str | Path) -> dict[int, np.ndarray]:
    level, _, records = read_emb1(path)
    if level != SENTENCE_LEVEL:
        raise DataError(f"{path}: expected sentence-level vectors, found {level}")
    return {r.sentence_id: np.asarray(r.vector, dtype=np.float64) for r in records}


def load_token_queries(path: str | Path) -> dict[int, dict[int, np.ndarray]]:
    level, _, records = read_emb1(path)
    if level != TOKEN_LEVEL:
        raise DataError(f"{path}: expected token-level vectors, found {level}")
    out: dict[int, dict[int, np.ndarray]] = {}
    for r in records:
        out.setdefault(r.sentence_id, {})[r.token_index] = np.asarray(
            r.vector, dtype=np.float64
        )
    return out


def load_candidates(path: str | Path) -> dict[int, list[int]]:
    """Candidate token indices per sentence, one JSON object per line with
    fields ``id`` and ``tokens``."""
    out: dict[int, list[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid = obj["id"]
                tokens = obj["tokens"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad candidate record: {exc}") from exc
            if not isinstance(sid, int) or not isinstance(tokens, list) or not all(
                isinstance(t, int) and t >= 0 for t in tokens
            ):
                raise DataError(f"{path}:{lineno}: id must be int, tokens a list of ints")
            if sid in out:
                raise DataError(f"{path}:{lineno}: duplicate candidate entry for id {sid}")
            out[sid] = tokens
    return out


def load_stores(
    *,
    train_sentence: str | Path | None = None,
    train_token: str | Path | None = None,
    test_sentence: str | Path | None = None,
    test_token: str | Path | None = None,
    candidates: str | Path | None = None,
) -> StoreSet:
    return StoreSet(
        train_sentence=(
            load_store(train_sentence, SENTENCE_LEVEL) if train_sentence else None
        ),
        train_token=load_store(train_token, TOKEN_LEVEL) if train_token else None,
        test_sentence_vectors=(
            load_sentence_queries(test_sentence) if test_sentence else None
        ),
        test_token_vectors=load_token_queries(test_token) if test_token else None,
        candidate_tokens=load_candidates(candidates) if candidates else None,
    )


def _check_stores(config: RunConfig, stores: StoreSet, test_corpus: LabeledCorpus) -> None:
    """Fail before any backend call when the config needs vectors the store
    set does not carry."""
    if config.retrieval == SENTENCE_RETRIEVAL and config.k > 0:
        if stores.train_sentence is None:
            raise ConfigError("sentence retrieval needs a train sentence store")
        if stores.test_sentence_vectors is None:
            raise ConfigError("sentence retrieval needs test sentence vectors")
        missing = [s.id for s in test_corpus if s.id not in stores.test_sentence_vectors]
        if missing:
            raise DataError(
                f"test sentence vectors missing for ids {missing[:5]}"
                f"{'...' if len(missing) > 5 else ''}"
            )
    needs_tokens = (config.retrieval == ENTITY_RETRIEVAL and config.k > 0) or (
        config.verification == VERIFY_FEW_SHOT
    )
    if needs_tokens:
        what = (
            "entity retrieval"
            if config.retrieval == ENTITY_RETRIEVAL
            else "few-shot verification"
        )
        if stores.train_token is None:
            raise ConfigError(f"{what} needs a train token store")
        if stores.test_token_vectors is None:
            raise ConfigError(f"{what} needs test token vectors")
        for sent in test_corpus:
            have = stores.test_token_vectors.get(sent.id, {})
            gaps = [i for i in range(len(sent)) if i not in have]
            if gaps:
                raise DataError(
                    f"sentence {sent.id}: token vectors missing for indices {gaps[:5]}"
                )


def _item_seed(seed: int, sentence_id: int, type_name: str) -> int:
    # derived per work item so draws are independent of visit order and
    # stable across processes
    digest = hashlib.sha256(f"{seed}:{sentence_id}:{type_name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _query_indices(sentence: Sentence, config: RunConfig, stores: StoreSet) -> list[int]:
    if config.token_query_mode == ALL_TOKENS:
        return list(range(len(sentence)))
    cands = (stores.candidate_tokens or {}).get(sentence.id)
    if not cands:
        # no recognizer output for this sentence: query with every token
        return list(range(len(sentence)))
    bad = [t for t in cands if t >= len(sentence)]
    if bad:
        raise DataError(f"sentence {sentence.id}: candidate token index {bad[0]} out of range")
    return sorted(set(cands))


def rank_demo_ids(
    sentence: Sentence,
    etype: EntityTypeSchema,
    config: RunConfig,
    stores: StoreSet,
    train_corpus: LabeledCorpus,
) -> list[int]:
    """Ranked train sentence ids for one (sentence, type) work item, best
    first. Never longer than k; shorter when the train side runs out."""
    if config.k <= 0:
        return []
    if config.retrieval == RANDOM_RETRIEVAL:
        ids = train_corpus.ids()
        k = min(config.k, len(ids))
        picks = random_demos(len(ids), k, _item_seed(config.seed, sentence.id, etype.name))
        return [int(ids[i]) for i in picks]
    if config.retrieval == SENTENCE_RETRIEVAL:
        store = stores.train_sentence
        assert store is not None  # _check_stores ran
        vector = stores.test_sentence_vectors[sentence.id]  # type: ignore[index]
        neighbors = store.knn_sentences(vector, min(config.k, store.size))
        return [int(nb.sentence_id) for nb in neighbors]
    store = stores.train_token
    assert store is not None
    vectors = stores.test_token_vectors[sentence.id]  # type: ignore[index]
    queries = [(i, vectors[i]) for i in _query_indices(sentence, config, stores)]
    fanout = min(config.fanout or config.k, store.size)
    return [int(sid) for sid in store.retrieve_token_demos(queries, K=fanout, k=config.k)]


def build_demo(
    train_corpus: LabeledCorpus, sid: int, etype: EntityTypeSchema, format: str
) -> Demonstration:
    """Demonstration pair for one train sentence: its text and the encoding
    of its gold spans of the queried type. Nested gold is reduced to the
    outermost spans first since the target text cannot express overlap."""
    sent = train_corpus.sentence(sid)
    spans, _ = markup.outermost_spans(train_corpus.spans_of(sid, etype.name))
    return Demonstration(input=sent.text(), output=markup.encode(format, sent, spans).text)


def extract_for_type(
    sentence: Sentence,
    etype: EntityTypeSchema,
    config: RunConfig,
    stores: StoreSet,
    backend: Backend,
    train_corpus: LabeledCorpus,
) -> tuple[list[EntitySpan], dict]:
    """One extraction pass: retrieve and trim demonstrations, render the
    prompt, complete it, and parse the completion back into spans of
    ``etype``. Parse trouble degrades to dropped-segment diagnostics, never
    an exception; backend errors propagate."""
    ranked_ids = rank_demo_ids(sentence, etype, config, stores, train_corpus)
    ranked = [build_demo(train_corpus, sid, etype, config.format) for sid in ranked_ids]
    fixed = promptkit.extraction_fixed_parts(etype, sentence.text())

    def attempt(ratio: float) -> tuple[int, str]:
        kept = promptkit.trim_to_budget(
            ranked,
            promptkit.estimate_tokens(fixed, ratio),
            config.budget,
            tokens_per_word=ratio,
        )
        spec = promptkit.PromptSpec(
            entity_type=etype,
            demos=promptkit.order_demos(kept, config.demo_order),
            query=sentence.text(),
            budget=config.budget,
            tokens_per_word=ratio,
        )
        return len(kept), promptkit.render_extraction_prompt(spec)

    ratio = config.tokens_per_word
    used, prompt = attempt(ratio)
    retrimmed = False
    try:
        response = backend.complete(CompletionRequest(prompt=prompt))
    except ContextOverflow:
        # the per-word ratio is an average; tighten once and retry
        ratio = RETRIM_RATIO
        used, prompt = attempt(ratio)
        response = backend.complete(CompletionRequest(prompt=prompt))
        retrimmed = True
    report = markup.parse(config.format, sentence, response.text, type=etype.name)
    used_ids = ranked_ids[:used]
    prompt_ids = list(reversed(used_ids)) if config.demo_order == NEAREST_LAST else used_ids
    diagnostics = {
        "type": etype.name,
        "demo_ids_ranked": ranked_ids,
        "demo_ids_used": prompt_ids,
        "demos_trimmed": len(ranked_ids) - used,
        "prompt_tokens": promptkit.estimate_tokens(prompt, ratio),
        "retrimmed": retrimmed,
        "cached": response.cached,
        "parse_dropped": [[text, reason] for text, reason in report.dropped],
        "parse_mutated": report.mutated,
    }
    return list(report.spans), diagnostics


_ANSWER_RE = re.compile(r"[A-Za-z]+")

ANSWER_YES = "yes"
ANSWER_NO = "no"
ANSWER_UNPARSED = "unparsed"


def classify_answer(text: str) -> str:
    """Verdict from the first alphabetic token of a completion: yes, no, or
    unparsed when neither leads."""
    m = _ANSWER_RE.search(text)
    token = m.group().lower() if m else ""
    if token == ANSWER_YES:
        return ANSWER_YES
    if token == ANSWER_NO:
        return ANSWER_NO
    return ANSWER_UNPARSED


def _demo_word(
    train_corpus: LabeledCorpus, sid: int, token_index: int, etype: EntityTypeSchema
) -> tuple[str, str]:
    """Word and answer for one retrieved train token. The word is the gold
    span containing the token, preferring the queried type and then the
    shortest span; a token outside every span stands alone. The answer is
    Yes only when the containing span has the queried type."""
    containing = [
        sp
        for sp in train_corpus.spans_of(sid)
        if sp.start <= token_index <= sp.end
    ]
    typed = [sp for sp in containing if sp.type == etype.name]
    if typed:
        best = min(typed, key=lambda sp: (len(sp), sp.start, sp.type))
        return best.surface, promptkit.YES
    if containing:
        best = min(containing, key=lambda sp: (len(sp), sp.start, sp.type))
        return best.surface, promptkit.NO
    return train_corpus.sentence(sid).tokens[token_index], promptkit.NO


def _verification_demos(
    span: EntitySpan,
    sentence: Sentence,
    etype: EntityTypeSchema,
    config: RunConfig,
    stores: StoreSet,
    train_corpus: LabeledCorpus,
) -> tuple[list[Demonstration], list[int]]:
    """Yes/No demonstration triplets for one extracted span, best first,
    queried by the mean of the span's token embeddings."""
    store = stores.train_token
    assert store is not None  # _check_stores ran
    vectors = stores.test_token_vectors[sentence.id]  # type: ignore[index]
    query = np.mean(
        [np.asarray(vectors[i], dtype=np.float64) for i in range(span.start, span.end + 1)],
        axis=0,
    )
    demos: list[Demonstration] = []
    ids: list[int] = []
    for nb in store.query(query, min(config.verification_k, store.size)):
        word, answer = _demo_word(train_corpus, nb.sentence_id, nb.token_index, etype)
        demos.append(
            Demonstration(
                input=train_corpus.sentence(nb.sentence_id).text(),
                output=answer,
                word=word,
            )
        )
        ids.append(int(nb.sentence_id))
    return demos, ids


def self_verify(
    spans: Sequence[EntitySpan],
    sentence: Sentence,
    etype: EntityTypeSchema,
    config: RunConfig,
    stores: StoreSet,
    backend: Backend,
    train_corpus: LabeledCorpus,
) -> tuple[list[EntitySpan], list[dict]]:
    """Ask the backend whether each extracted span really is an entity of
    the queried type. A span is dropped only on a clear leading no; an
    answer that parses as neither yes nor no keeps the span and logs the
    verdict, so a mute verifier cannot delete recall."""
    kept: list[EntitySpan] = []
    reports: list[dict] = []
    for span in spans:
        demos: list[Demonstration] = []
        demo_ids: list[int] = []
        if config.verification == VERIFY_FEW_SHOT:
            demos, demo_ids = _verification_demos(
                span, sentence, etype, config, stores, train_corpus
            )
        fixed = promptkit.verification_fixed_parts(etype, sentence.text(), span.surface)
        trimmed = promptkit.trim_to_budget(
            demos,
            promptkit.estimate_tokens(fixed, config.tokens_per_word),
            config.budget,
            tokens_per_word=config.tokens_per_word,
            block_renderer=lambda d: promptkit.verification_demo_block(etype, d),
        )
        prompt = promptkit.render_verification_prompt(
            etype,
            promptkit.order_demos(trimmed, config.demo_order),
            sentence.text(),
            span.surface,
            budget=config.budget,
            tokens_per_word=config.tokens_per_word,
        )
        response = backend.complete(CompletionRequest(prompt=prompt))
        verdict = classify_answer(response.text)
        keep = verdict != ANSWER_NO
        if keep:
            kept.append(span)
        used = demo_ids[: len(trimmed)]
        if config.demo_order == NEAREST_LAST:
            used = list(reversed(used))
        reports.append(
            {
                "start": span.start,
                "end": span.end,
                "surface": span.surface,
                "answer": response.text,
                "verdict": verdict,
                "kept": keep,
                "demo_ids_used": used,
            }
        )
    return kept, reports


def merge_types(
    per_type_spans: Mapping[str, Sequence[EntitySpan]],
    mode: str,
    type_priority: Sequence[str],
) -> tuple[list[EntitySpan], list[dict]]:
    """Combine per-type extraction results into one span list.

    Nested mode unions everything. Flat mode resolves overlaps: the longer
    span wins, ties fall to the earlier type in ``type_priority``, then to
    the earlier start. Returns the merged spans in sentence order plus a log
    of every resolution."""
    priority = {name: i for i, name in enumerate(type_priority)}
    unknown = sorted(set(per_type_spans) - set(priority))
    if unknown:
        raise ConfigError(f"span types outside the priority list: {', '.join(unknown)}")
    if mode not in (FLAT, NESTED):
        raise ConfigError(f"bad merge mode {mode!r}")
    pooled = [sp for name in type_priority for sp in per_type_spans.get(name, ())]
    if mode == NESTED:
        pooled.sort(key=lambda sp: (sp.start, sp.end, priority[sp.type]))
        return pooled, []
    contenders = sorted(
        pooled, key=lambda sp: (-len(sp), priority[sp.type], sp.start)
    )
    kept: list[EntitySpan] = []
    log: list[dict] = []
    for sp in contenders:
        clash = next((other for other in kept if spans_overlap(sp, other)), None)
        if clash is None:
            kept.append(sp)
        else:
            log.append(
                {
                    "dropped": [sp.start, sp.end, sp.type],
                    "kept": [clash.start, clash.end, clash.type],
                }
            )
    kept.sort(key=lambda sp: (sp.start, sp.end, priority[sp.type]))
    return kept, log


@dataclass(frozen=True)
class PredictionSet:
    """Final spans for one sentence with per-span provenance and the
    diagnostics accumulated on the way."""

    sentence_id: int
    spans: tuple[EntitySpan, ...]
    provenance: tuple[str, ...]
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.spans) != len(self.provenance):
            raise DataError(
                f"sentence {self.sentence_id}: {len(self.spans)} spans but "
                f"{len(self.provenance)} provenance entries"
            )
        for p in self.provenance:
            if p not in (RAW, VERIFIED):
                raise DataError(f"bad provenance {p!r}")


def _git_describe() -> str | None:
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    return proc.stdout.strip() if proc.returncode == 0 else None


def run_corpus(
    test_corpus: LabeledCorpus,
    train_corpus: LabeledCorpus,
    schema: SchemaSet,
    config: RunConfig,
    backend: Backend,
    *,
    verify_backend: Backend | None = None,
    stores: StoreSet | None = None,
) -> tuple[list[PredictionSet], dict]:
    """Run the full pipeline over every test sentence.

    Work items are (sentence, type) pairs, dispatched to a thread pool when
    ``config.workers`` allows; results are reassembled in corpus and schema
    order so concurrency never changes the output. Returns the prediction
    sets plus a run manifest."""
    stores = stores if stores is not None else StoreSet()
    _check_stores(config, stores, test_corpus)
    verifier = verify_backend if verify_backend is not None else backend
    verifying = config.verification != VERIFY_OFF

    items = [(sent, etype) for sent in test_corpus for etype in schema]

    def work(item: tuple[Sentence, EntityTypeSchema]) -> tuple[int, str, list, dict]:
        sent, etype = item
        spans, diag = extract_for_type(sent, etype, config, stores, backend, train_corpus)
        if verifying and spans:
            spans, verify_reports = self_verify(
                spans, sent, etype, config, stores, verifier, train_corpus
            )
            diag["verification"] = verify_reports
        return sent.id, etype.name, spans, diag

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(item) for item in items]

    by_item: dict[tuple[int, str], tuple[list, dict]] = {
        (sid, tname): (spans, diag) for sid, tname, spans, diag in results
    }
    provenance_flag = VERIFIED if verifying else RAW
    predictions: list[PredictionSet] = []
    for sent in test_corpus:
        per_type = {t.name: by_item[(sent.id, t.name)][0] for t in schema}
        merged, log = merge_types(per_type, test_corpus.mode, schema.names())
        diagnostics = {
            "types": {t.name: by_item[(sent.id, t.name)][1] for t in schema},
            "merge_log": log,
        }
        predictions.append(
            PredictionSet(
                sentence_id=sent.id,
                spans=tuple(merged),
                provenance=tuple(provenance_flag for _ in merged),
                diagnostics=diagnostics,
            )
        )

    cache_stats = None
    hits = getattr(backend, "hits", None)
    misses = getattr(backend, "misses", None)
    if hits is not None and misses is not None:
        total = hits + misses
        cache_stats = {
            "hits": hits,
            "misses": misses,
            "hit_rate": round(hits / total, 4) if total else 0.0,
        }
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "backend_id": getattr(backend, "backend_id", type(backend).__name__),
        "verify_backend_id": (
            getattr(verifier, "backend_id", type(verifier).__name__) if verifying else None
        ),
        "schema": list(schema.names()),
        "mode": test_corpus.mode,
        "test_sentences": len(test_corpus),
        "train_sentences": len(train_corpus),
        "cache": cache_stats,
        "git_describe": _git_describe(),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    return predictions, manifest


def dump_predictions(predictions: Sequence[PredictionSet], path: str | Path) -> None:
    """One JSON object per line, keys sorted, no volatile fields, so equal
    runs dump equal bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for pred in predictions:
            obj = {
                "id": pred.sentence_id,
                "spans": [
                    {
                        "start": sp.start,
                        "end": sp.end,
                        "type": sp.type,
                        "surface": sp.surface,
                        "provenance": prov,
                    }
                    for sp, prov in zip(pred.spans, pred.provenance)
                ],
                "diagnostics": pred.diagnostics,
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def load_predictions(path: str | Path) -> list[PredictionSet]:
    out: list[PredictionSet] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                spans = tuple(
                    EntitySpan(s["start"], s["end"], s["type"], s["surface"])
                    for s in obj["spans"]
                )
                provenance = tuple(s["provenance"] for s in obj["spans"])
                out.append(
                    PredictionSet(
                        sentence_id=obj["id"],
                        spans=spans,
                        provenance=provenance,
                        diagnostics=obj.get("diagnostics", {}),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    return out


def write_manifest(manifest: Mapping[str, object], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
