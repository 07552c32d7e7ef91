"""Corpora, entity schemas, and tag-sequence codecs.

Two on-disk corpus shapes are supported:

* flat CoNLL: two whitespace-separated columns ``token TAG``, blank line
  between sentences, tags in BIO or BIOES form (both decode transparently).
* nested JSONL: one object per line with ``id``, ``tokens`` and ``entities``
  (``start``/``end``/``type``, inclusive ends); spans may overlap.

Loaded corpora are immutable and keep sentence ids stable under subsetting,
so retrieval indices built against a corpus stay valid for any split of it.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

FLAT = "flat"
NESTED = "nested"

TAG_PREFIXES = frozenset("BIMES")


class CorpusError(DataError):
    pass


class MalformedLine(CorpusError):
    pass


class IllegalTagTransition(CorpusError):
    pass


class UnknownType(CorpusError):
    pass


class SpanOutOfRange(CorpusError):
    pass


class DuplicateId(CorpusError):
    pass


class OverlapInFlatMode(CorpusError):
    pass


@dataclass(frozen=True)
class EntityTypeSchema:
    """One entity type. ``description`` is the short natural-language phrase
    spliced into prompt templates ("location", "person"); ``annotation``
    optionally carries the longer guideline text as reference metadata."""

    name: str
    description: str
    annotation: str | None = None

    def __post_init__(self) -> None:
        if not self.name or self.name != self.name.strip():
            raise CorpusError(f"bad type name {self.name!r}")
        if not self.description or not self.description.strip():
            raise CorpusError(f"type {self.name}: empty description")


class SchemaSet:
    """Ordered set of entity types with unique names."""

    def __init__(self, types: Iterable[EntityTypeSchema]):
        self.types: tuple[EntityTypeSchema, ...] = tuple(types)
        if not self.types:
            raise CorpusError("schema has no types")
        seen: set[str] = set()
        for t in self.types:
            if t.name in seen:
                raise CorpusError(f"duplicate type name {t.name!r}")
            seen.add(t.name)
        self._by_name = {t.name: t for t in self.types}

    def __iter__(self) -> Iterator[EntityTypeSchema]:
        return iter(self.types)

    def __len__(self) -> int:
        return len(self.types)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.types)

    def get(self, name: str) -> EntityTypeSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownType(f"unknown entity type {name!r}") from None

    def by_description(self, description: str) -> EntityTypeSchema | None:
        """Reverse lookup used by mock backends reading rendered prompts."""
        for t in self.types:
            if t.description == description:
                return t
        return None

    @classmethod
    def from_json(cls, path: str | Path) -> "SchemaSet":
        """Load a schema file: list of {"name", "description", "annotation"?}."""
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusError(f"{path}: cannot read schema: {exc}") from exc
        if not isinstance(raw, list):
            raise CorpusError(f"{path}: schema must be a JSON list")
        types = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict) or "name" not in item or "description" not in item:
                raise CorpusError(f"{path}: entry {i} needs name and description")
            extra = set(item) - {"name", "description", "annotation"}
            if extra:
                raise CorpusError(f"{path}: entry {i} has unknown keys {sorted(extra)}")
            types.append(
                EntityTypeSchema(
                    name=item["name"],
                    description=item["description"],
                    annotation=item.get("annotation"),
                )
            )
        return cls(types)


def builtin_schema(name: str) -> SchemaSet:
    """Load one of the bundled schema files (conll2003, ontonotes5, ace)."""
    path = Path(__file__).parent / "schemas" / f"{name}.json"
    if not path.exists():
        raise CorpusError(f"no bundled schema named {name!r}")
    return SchemaSet.from_json(path)


@dataclass(frozen=True)
class Sentence:
    """Tokenized sentence. Tokens are non-empty and contain no whitespace."""

    id: int
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.id < 0:
            raise CorpusError(f"negative sentence id {self.id}")
        if not self.tokens:
            raise CorpusError(f"sentence {self.id}: no tokens")
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise CorpusError(f"sentence {self.id}: bad token {tok!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Inclusive token range [start, end] with a type name and the surface
    text (space-joined tokens of the range)."""

    start: int
    end: int
    type: str
    surface: str

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise CorpusError(f"bad span range [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def key(self) -> tuple[int, int, str]:
        return (self.start, self.end, self.type)

    @classmethod
    def from_range(cls, sentence: Sentence, start: int, end: int, type: str) -> "EntitySpan":
        if start < 0 or end < start or end >= len(sentence):
            raise SpanOutOfRange(
                f"sentence {sentence.id}: span [{start}, {end}] outside 0..{len(sentence) - 1}"
            )
        return cls(start=start, end=end, type=type, surface=" ".join(sentence.tokens[start : end + 1]))


def validate_span(span: EntitySpan, sentence: Sentence, schema: SchemaSet | None = None) -> None:
    """Check a span against its sentence (range, surface) and optionally a schema."""
    if span.end >= len(sentence):
        raise SpanOutOfRange(
            f"sentence {sentence.id}: span [{span.start}, {span.end}] outside 0..{len(sentence) - 1}"
        )
    want = " ".join(sentence.tokens[span.start : span.end + 1])
    if span.surface != want:
        raise CorpusError(
            f"sentence {sentence.id}: span surface {span.surface!r} != tokens {want!r}"
        )
    if schema is not None and span.type not in schema:
        raise UnknownType(f"unknown entity type {span.type!r}")


def spans_overlap(a: EntitySpan, b: EntitySpan) -> bool:
    return a.start <= b.end and b.start <= a.end


@dataclass(frozen=True)
class LabeledCorpus:
    """Sentences plus gold spans per sentence id. ``mode`` is flat (spans per
    sentence pairwise non-overlapping) or nested (overlaps allowed)."""

    sentences: tuple[Sentence, ...]
    gold: Mapping[int, tuple[EntitySpan, ...]]
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in (FLAT, NESTED):
            raise CorpusError(f"bad corpus mode {self.mode!r}")
        by_id: dict[int, Sentence] = {}
        for s in self.sentences:
            if s.id in by_id:
                raise DuplicateId(f"duplicate sentence id {s.id}")
            by_id[s.id] = s
        for sid, spans in self.gold.items():
            if sid not in by_id:
                raise CorpusError(f"gold entry for unknown sentence id {sid}")
            sent = by_id[sid]
            for span in spans:
                validate_span(span, sent)
            if self.mode == FLAT:
                ordered = sorted(spans, key=lambda s: (s.start, s.end))
                for a, b in zip(ordered, ordered[1:]):
                    if spans_overlap(a, b):
                        raise OverlapInFlatMode(
                            f"sentence {sid}: overlapping spans {a.key()} and {b.key()}"
                        )
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_text", {})

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def ids(self) -> tuple[int, ...]:
        return tuple(s.id for s in self.sentences)

    def sentence(self, sid: int) -> Sentence:
        try:
            return self._by_id[sid]  # type: ignore[attr-defined]
        except KeyError:
            raise CorpusError(f"no sentence with id {sid}") from None

    def spans_of(self, sid: int, type: str | None = None) -> tuple[EntitySpan, ...]:
        spans = self.gold.get(sid, ())
        if type is None:
            return tuple(spans)
        return tuple(sp for sp in spans if sp.type == type)

    def find_by_text(self, text: str) -> Sentence | None:
        """First sentence whose space-joined tokens equal ``text``."""
        cache: dict[str, Sentence] = self._by_text  # type: ignore[attr-defined]
        if not cache:
            for s in self.sentences:
                cache.setdefault(s.text(), s)
        return cache.get(text)

    def subset(self, ids: Sequence[int]) -> "LabeledCorpus":
        """New corpus with exactly these sentences, original ids kept."""
        keep = []
        for sid in ids:
            keep.append(self.sentence(sid))
        gold = {s.id: self.gold.get(s.id, ()) for s in keep}
        return LabeledCorpus(sentences=tuple(keep), gold=gold, mode=self.mode)

    def total_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def type_counts(self) -> Counter:
        counts: Counter = Counter()
        for spans in self.gold.values():
            for sp in spans:
                counts[sp.type] += 1
        return counts


def _split_tag(tag: str, where: str) -> tuple[str, str | None]:
    """Split "B-LOC" into ("B", "LOC"); "O" into ("O", None)."""
    if tag == "O":
        return "O", None
    if len(tag) >= 3 and tag[0] in TAG_PREFIXES and tag[1] == "-":
        return tag[0], tag[2:]
    raise MalformedLine(f"{where}: bad tag {tag!r}")


def tags_to_spans(
    tags: Sequence[str],
    *,
    strict: bool = False,
    where: str = "<tags>",
    positions: Sequence[str] | None = None,
) -> list[tuple[int, int, str]]:
    """Decode a BIO/BIOES/BMES tag sequence into (start, end, type) triples.

    Non-strict mode repairs locally impossible transitions and logs each
    repair: an orphan continuation (I/M with no open run, or after a run of a
    different type) starts a new run, an orphan E becomes a single. Strict
    mode raises IllegalTagTransition for those instead. A B that implicitly
    closes an open run is legal BIO and never flagged.

    ``positions`` optionally gives a human-readable location per tag (file
    line numbers) for error and log messages.
    """

    def where_at(i: int) -> str:
        if positions is not None:
            return positions[i]
        return f"{where}: token {i}"

    spans: list[tuple[int, int, str]] = []
    open_type: str | None = None
    open_start = 0

    def close(upto: int) -> None:
        nonlocal open_type
        if open_type is not None:
            spans.append((open_start, upto, open_type))
            open_type = None

    for i, tag in enumerate(tags):
        prefix, etype = _split_tag(tag, where_at(i))
        if prefix == "O":
            close(i - 1)
        elif prefix == "B":
            close(i - 1)
            open_type, open_start = etype, i
        elif prefix in ("I", "M"):
            if open_type == etype:
                pass
            elif open_type is None:
                if strict:
                    raise IllegalTagTransition(
                        f"{where_at(i)}: {tag} continues nothing"
                    )
                log.warning("%s: %s continues nothing, starting new span", where_at(i), tag)
                open_type, open_start = etype, i
            else:
                if strict:
                    raise IllegalTagTransition(
                        f"{where_at(i)}: {tag} continues a {open_type} span"
                    )
                log.warning(
                    "%s: %s continues a %s span, closing it and starting new",
                    where_at(i), tag, open_type,
                )
                close(i - 1)
                open_type, open_start = etype, i
        elif prefix == "E":
            if open_type == etype:
                close(i)
            else:
                if strict:
                    raise IllegalTagTransition(f"{where_at(i)}: {tag} ends nothing")
                log.warning("%s: %s ends nothing, treating as single", where_at(i), tag)
                close(i - 1)
                spans.append((i, i, etype))
        elif prefix == "S":
            close(i - 1)
            spans.append((i, i, etype))
    close(len(tags) - 1)
    return spans


def spans_to_tags(sentence: Sentence, spans: Sequence[EntitySpan], scheme: str = "bio") -> list[str]:
    """Encode non-overlapping spans as a BIO or BIOES tag sequence."""
    if scheme not in ("bio", "bioes"):
        raise CorpusError(f"unknown tag scheme {scheme!r}")
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for a, b in zip(ordered, ordered[1:]):
        if spans_overlap(a, b):
            raise OverlapInFlatMode(
                f"sentence {sentence.id}: cannot tag overlapping spans {a.key()} and {b.key()}"
            )
    tags = ["O"] * len(sentence)
    for sp in ordered:
        if sp.end >= len(sentence):
            raise SpanOutOfRange(
                f"sentence {sentence.id}: span [{sp.start}, {sp.end}] outside 0..{len(sentence) - 1}"
            )
        if scheme == "bio":
            tags[sp.start] = f"B-{sp.type}"
            for i in range(sp.start + 1, sp.end + 1):
                tags[i] = f"I-{sp.type}"
        else:
            if len(sp) == 1:
                tags[sp.start] = f"S-{sp.type}"
            else:
                tags[sp.start] = f"B-{sp.type}"
                for i in range(sp.start + 1, sp.end):
                    tags[i] = f"I-{sp.type}"
                tags[sp.end] = f"E-{sp.type}"
    return tags


def load_conll(path: str | Path, schema: SchemaSet, *, strict: bool = False) -> LabeledCorpus:
    """Load a two-column CoNLL file into a flat corpus.

    Sentence ids are assigned sequentially from 0 in file order. Tags may be
    BIO or BIOES. Raises MalformedLine, UnknownType or (strict mode)
    IllegalTagTransition, all with file:line positions.
    """
    path = Path(path)
    sentences: list[Sentence] = []
    gold: dict[int, tuple[EntitySpan, ...]] = {}
    pending: list[tuple[str, str, int]] = []

    def flush() -> None:
        if not pending:
            return
        sid = len(sentences)
        tokens = tuple(tok for tok, _, _ in pending)
        tags = [tag for _, tag, _ in pending]
        positions = [f"{path}:{lineno}" for _, _, lineno in pending]
        for tag, pos in zip(tags, positions):
            _, etype = _split_tag(tag, pos)
            if etype is not None and etype not in schema:
                raise UnknownType(f"{pos}: unknown entity type {etype!r}")
        sent = Sentence(id=sid, tokens=tokens)
        triples = tags_to_spans(tags, strict=strict, positions=positions)
        gold[sid] = tuple(EntitySpan.from_range(sent, s, e, t) for s, e, t in triples)
        sentences.append(sent)
        pending.clear()

    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            fields = line.split()
            if len(fields) != 2:
                raise MalformedLine(
                    f"{path}:{lineno}: expected 'token TAG', got {len(fields)} fields"
                )
            pending.append((fields[0], fields[1], lineno))
    flush()
    return LabeledCorpus(sentences=tuple(sentences), gold=gold, mode=FLAT)


def dump_conll(corpus: LabeledCorpus, path: str | Path, scheme: str = "bio") -> None:
    """Write a flat corpus back out in two-column form."""
    if corpus.mode != FLAT:
        raise CorpusError("can only dump flat corpora to CoNLL form")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sent in corpus:
            tags = spans_to_tags(sent, corpus.spans_of(sent.id), scheme)
            for tok, tag in zip(sent.tokens, tags):
                fh.write(f"{tok} {tag}\n")
            fh.write("\n")


def load_nested_jsonl(path: str | Path, schema: SchemaSet) -> LabeledCorpus:
    """Load a nested corpus: one JSON object per line with id, tokens and
    entities [{start, end, type}] (inclusive ends, overlaps allowed)."""
    path = Path(path)
    sentences: list[Sentence] = []
    gold: dict[int, tuple[EntitySpan, ...]] = {}
    seen: set[int] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise MalformedLine(f"{path}:{lineno}: expected an object")
            missing = {"id", "tokens", "entities"} - set(obj)
            if missing:
                raise MalformedLine(f"{path}:{lineno}: missing keys {sorted(missing)}")
            sid = obj["id"]
            if not isinstance(sid, int) or sid < 0:
                raise MalformedLine(f"{path}:{lineno}: id must be a non-negative integer")
            if sid in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate sentence id {sid}")
            seen.add(sid)
            toks = obj["tokens"]
            if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
                raise MalformedLine(f"{path}:{lineno}: tokens must be a list of strings")
            try:
                sent = Sentence(id=sid, tokens=tuple(toks))
            except CorpusError as exc:
                raise MalformedLine(f"{path}:{lineno}: {exc}") from exc
            spans = []
            for j, ent in enumerate(obj["entities"]):
                if not isinstance(ent, dict) or {"start", "end", "type"} - set(ent):
                    raise MalformedLine(
                        f"{path}:{lineno}: entity {j} needs start, end and type"
                    )
                start, end, etype = ent["start"], ent["end"], ent["type"]
                if not isinstance(start, int) or not isinstance(end, int):
                    raise MalformedLine(f"{path}:{lineno}: entity {j} bounds must be integers")
                if etype not in schema:
                    raise UnknownType(f"{path}:{lineno}: unknown entity type {etype!r}")
                if start < 0 or end < start or end >= len(sent):
                    raise SpanOutOfRange(
                        f"{path}:{lineno}: entity {j} range [{start}, {end}] "
                        f"outside 0..{len(sent) - 1}"
                    )
                spans.append(EntitySpan.from_range(sent, start, end, etype))
            sentences.append(sent)
            gold[sid] = tuple(spans)
    return LabeledCorpus(sentences=tuple(sentences), gold=gold, mode=NESTED)


def load_corpus(path: str | Path, schema: SchemaSet, *, strict: bool = False) -> LabeledCorpus:
    """Dispatch on extension: .jsonl goes to the nested loader, anything else
    to the CoNLL loader."""
    if str(path).endswith(".jsonl"):
        return load_nested_jsonl(path, schema)
    return load_conll(path, schema, strict=strict)


def corpus_report(corpus: LabeledCorpus) -> dict:
    """Summary stats used by the validate-corpus command."""
    return {
        "mode": corpus.mode,
        "sentences": len(corpus),
        "tokens": corpus.total_tokens(),
        "entities": sum(len(v) for v in corpus.gold.values()),
        "per_type": dict(sorted(corpus.type_counts().items())),
    }
