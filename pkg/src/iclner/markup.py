"""Text encodings that turn span annotation into sequence generation.

Three formats:

* atmarker: entity token ranges wrapped in ``@@`` and ``##``
  ("``@@China## says ...``"). Tokens that themselves contain a marker are
  escaped with a backslash on encode.
* bmes: one position tag per token ("``B-ORG E-ORG O O``"), middles written
  ``M-`` (``I-`` accepted on parse).
* entpos: entity surfaces with their start offsets
  ("``White House (0), Washington (4)``"), ``None`` when empty.

Parsers are total: any string input yields a ParseReport, never an
exception. A report carries the recovered spans plus an incident list
``dropped`` of (surface, reason) pairs. Reasons: SurfaceNotFound,
UnbalancedMarker, LengthMismatch, and PositionRepaired. The last one is a
repair, not a removal: the span IS emitted (at the real position of its
surface) and the incident records that the claimed position was wrong.
``mutated`` is set when the generated text does not conform to the original
sentence: for atmarker, the marker-stripped text differs from the input
tokens; for bmes, the tag string has the wrong length or junk tags.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .corpus import EntitySpan, Sentence, spans_overlap, tags_to_spans
from .errors import DataError

log = logging.getLogger(__name__)

ATMARKER = "atmarker"
BMES = "bmes"
ENTPOS = "entpos"
FORMATS = (ATMARKER, BMES, ENTPOS)

OPEN = "@@"
CLOSE = "##"

SURFACE_NOT_FOUND = "SurfaceNotFound"
UNBALANCED_MARKER = "UnbalancedMarker"
LENGTH_MISMATCH = "LengthMismatch"
POSITION_REPAIRED = "PositionRepaired"


class MarkupError(DataError):
    pass


class OverlappingSpans(MarkupError):
    pass


class UnknownFormat(MarkupError):
    pass


@dataclass(frozen=True)
class MarkedText:
    text: str
    format: str


@dataclass(frozen=True)
class ParseReport:
    spans: tuple[EntitySpan, ...]
    dropped: tuple[tuple[str, str], ...] = ()
    mutated: bool = False


def _check_encodable(sentence: Sentence, spans, single_type: bool) -> list[EntitySpan]:
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for sp in ordered:
        if sp.end >= len(sentence):
            raise MarkupError(
                f"sentence {sentence.id}: span [{sp.start}, {sp.end}] out of range"
            )
    for a, b in zip(ordered, ordered[1:]):
        if spans_overlap(a, b):
            raise OverlappingSpans(
                f"sentence {sentence.id}: cannot encode overlapping spans "
                f"{a.key()} and {b.key()}"
            )
    if single_type and len({sp.type for sp in ordered}) > 1:
        raise MarkupError(
            f"sentence {sentence.id}: marker encoding covers one type at a time"
        )
    return ordered


def outermost_spans(spans) -> tuple[list[EntitySpan], bool]:
    """Reduce a possibly-overlapping span list to a non-overlapping one for
    encoding: spans contained in a longer span are dropped, and among
    partially overlapping survivors the earlier-starting longer one wins.
    Returns (kept, reduced_flag)."""
    ordered = sorted(spans, key=lambda s: (s.start, -(s.end - s.start), s.type))
    kept: list[EntitySpan] = []
    for sp in ordered:
        if all(not spans_overlap(sp, other) for other in kept):
            kept.append(sp)
    kept.sort(key=lambda s: s.start)
    return kept, len(kept) != len(set(s.key() for s in spans))


def _escape(token: str) -> str:
    # a literal backslash directly before a marker inside a token stays
    # ambiguous; tokenized corpora do not produce that shape
    return token.replace(OPEN, "\\" + OPEN).replace(CLOSE, "\\" + CLOSE)


def _unescape(text: str) -> str:
    return text.replace("\\" + OPEN, OPEN).replace("\\" + CLOSE, CLOSE)


def encode_atmarker(sentence: Sentence, spans) -> MarkedText:
    """Wrap each span's tokens in @@ and ##. Spans must be non-overlapping
    and of one type."""
    ordered = _check_encodable(sentence, spans, single_type=True)
    starts = {sp.start for sp in ordered}
    ends = {sp.end for sp in ordered}
    parts = []
    for i, tok in enumerate(sentence.tokens):
        piece = _escape(tok)
        if i in starts:
            piece = OPEN + piece
        if i in ends:
            piece = piece + CLOSE
        parts.append(piece)
    return MarkedText(text=" ".join(parts), format=ATMARKER)


def _find_unescaped(text: str, marker: str, start: int) -> int:
    i = start
    while True:
        i = text.find(marker, i)
        # position 0 cannot be escaped, so <= 0 covers both hits there and misses
        if i <= 0:
            return i
        if text[i - 1] == "\\":
            i += 1
            continue
        return i


def _strip_markers(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text.startswith("\\" + OPEN, i) or text.startswith("\\" + CLOSE, i):
            out.append(text[i + 1 : i + 3])
            i += 3
        elif text.startswith(OPEN, i) or text.startswith(CLOSE, i):
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def parse_atmarker(original: Sentence, generated: str, type: str) -> ParseReport:
    """Recover spans of ``type`` from marker-form generated text.

    Marked segments run from each unescaped ``@@`` to the next unescaped
    ``##``; an opener with no closer discards the rest of the text
    (UnbalancedMarker). A closer with no opener is plain text. A cursor
    walks the original tokens: unmarked words advance it while they match
    in sequence, and each segment's surface is matched to its earliest
    occurrence at or after the cursor. A faithful echo therefore recovers
    exact positions, and repeated surfaces resolve left to right.
    """
    dropped: list[tuple[str, str]] = []
    pieces: list[tuple[bool, str]] = []
    i = 0
    while True:
        a = _find_unescaped(generated, OPEN, i)
        if a < 0:
            pieces.append((False, generated[i:]))
            break
        b = _find_unescaped(generated, CLOSE, a + len(OPEN))
        if b < 0:
            pieces.append((False, generated[i:a]))
            dropped.append((generated[a + len(OPEN) :], UNBALANCED_MARKER))
            break
        pieces.append((False, generated[i:a]))
        pieces.append((True, _unescape(generated[a + len(OPEN) : b])))
        i = b + len(CLOSE)

    spans: list[EntitySpan] = []
    cursor = 0
    for marked, text in pieces:
        if not marked:
            for word in text.split():
                if cursor < len(original.tokens) and _unescape(word) == original.tokens[cursor]:
                    cursor += 1
            continue
        words = text.split()
        n = len(words)
        if n == 0:
            dropped.append((text, SURFACE_NOT_FOUND))
            continue
        found = -1
        for s in range(cursor, len(original.tokens) - n + 1):
            if list(original.tokens[s : s + n]) == words:
                found = s
                break
        if found < 0:
            dropped.append((text, SURFACE_NOT_FOUND))
            continue
        spans.append(EntitySpan.from_range(original, found, found + n - 1, type))
        cursor = found + n

    mutated = _strip_markers(generated).split() != list(original.tokens)
    return ParseReport(spans=tuple(spans), dropped=tuple(dropped), mutated=mutated)


_TAG_RE = re.compile(r"^(O|[BIMES]-\S+)$")


def encode_bmes(sentence: Sentence, spans) -> MarkedText:
    """One tag per token: S for singles, B/M.../E for longer spans, O
    elsewhere. Spans may mix types but must not overlap."""
    ordered = _check_encodable(sentence, spans, single_type=False)
    tags = ["O"] * len(sentence)
    for sp in ordered:
        if len(sp) == 1:
            tags[sp.start] = f"S-{sp.type}"
        else:
            tags[sp.start] = f"B-{sp.type}"
            for i in range(sp.start + 1, sp.end):
                tags[i] = f"M-{sp.type}"
            tags[sp.end] = f"E-{sp.type}"
    return MarkedText(text=" ".join(tags), format=BMES)


def parse_bmes(original: Sentence, generated: str) -> ParseReport:
    """Recover typed spans from a tag string. Tags beyond the sentence
    length are ignored and recorded once as LengthMismatch (likewise a
    too-short tag string records its shortfall); junk tokens decode as O and
    set ``mutated``."""
    items = generated.split()
    n = len(original.tokens)
    dropped: list[tuple[str, str]] = []
    mutated = False
    if len(items) != n:
        tail = " ".join(items[n:])
        dropped.append((tail, LENGTH_MISMATCH))
        mutated = True
    usable = items[:n]
    tags = []
    for item in usable:
        if _TAG_RE.match(item):
            tags.append(item)
        else:
            tags.append("O")
            mutated = True
    tags += ["O"] * (n - len(tags))
    spans = tuple(
        EntitySpan.from_range(original, s, e, t) for s, e, t in tags_to_spans(tags)
    )
    return ParseReport(spans=spans, dropped=tuple(dropped), mutated=mutated)


NONE_OUTPUT = "None"


def encode_entpos(sentence: Sentence, spans) -> MarkedText:
    """Entity list form: ``surface (start)`` items joined by commas,
    ``None`` when there are no spans."""
    ordered = _check_encodable(sentence, spans, single_type=True)
    if not ordered:
        return MarkedText(text=NONE_OUTPUT, format=ENTPOS)
    items = [f"{sp.surface} ({sp.start})" for sp in ordered]
    return MarkedText(text=", ".join(items), format=ENTPOS)


_ENTPOS_POS = re.compile(r"\((\d+)\)")


def parse_entpos(original: Sentence, generated: str, type: str) -> ParseReport:
    """Recover spans of ``type`` from entity-list text.

    Items are anchored on their ``(digits)`` position markers; each item's
    surface is the text between the previous marker and its own, minus the
    one separating comma. A claimed position is trusted when the surface
    actually sits there; otherwise the surface is searched from the
    sentence start and the first occurrence wins (PositionRepaired), or the
    item is dropped (SurfaceNotFound). Text after the last marker is
    ignored, and a token that itself looks like a position marker defeats
    the listing format.
    """
    dropped: list[tuple[str, str]] = []
    spans: list[EntitySpan] = []
    if generated.strip().lower() in ("", NONE_OUTPUT.lower(), NONE_OUTPUT.lower() + "."):
        return ParseReport(spans=(), dropped=(), mutated=False)
    prev_end = 0
    for m in _ENTPOS_POS.finditer(generated):
        chunk = generated[prev_end : m.start()].lstrip()
        if prev_end > 0 and chunk.startswith(","):
            chunk = chunk[1:]
        surface = chunk.strip()
        pos = int(m.group(1))
        prev_end = m.end()
        words = surface.split()
        n = len(words)
        if n == 0:
            dropped.append((surface, SURFACE_NOT_FOUND))
            continue
        if pos + n <= len(original.tokens) and list(original.tokens[pos : pos + n]) == words:
            spans.append(EntitySpan.from_range(original, pos, pos + n - 1, type))
            continue
        found = -1
        for s in range(0, len(original.tokens) - n + 1):
            if list(original.tokens[s : s + n]) == words:
                found = s
                break
        if found < 0:
            dropped.append((surface, SURFACE_NOT_FOUND))
        else:
            spans.append(EntitySpan.from_range(original, found, found + n - 1, type))
            dropped.append((surface, POSITION_REPAIRED))
    return ParseReport(spans=tuple(spans), dropped=tuple(dropped), mutated=False)


def encode(format: str, sentence: Sentence, spans) -> MarkedText:
    if format == ATMARKER:
        return encode_atmarker(sentence, spans)
    if format == BMES:
        return encode_bmes(sentence, spans)
    if format == ENTPOS:
        return encode_entpos(sentence, spans)
    raise UnknownFormat(f"unknown format {format!r}")


def parse(format: str, original: Sentence, generated: str, type: str) -> ParseReport:
    """Dispatch to the format's parser; bmes results are filtered to
    ``type`` since its tags carry their own types."""
    if format == ATMARKER:
        return parse_atmarker(original, generated, type)
    if format == BMES:
        report = parse_bmes(original, generated)
        return ParseReport(
            spans=tuple(sp for sp in report.spans if sp.type == type),
            dropped=report.dropped,
            mutated=report.mutated,
        )
    if format == ENTPOS:
        return parse_entpos(original, generated, type)
    raise UnknownFormat(f"unknown format {format!r}")
