"""Prompt assembly for extraction and verification.

Template strings here are a frozen public contract: the golden files under
``fixtures/prompts/`` are rendered from them and compared byte-for-byte.
An N-type schema turns one sentence into N separate extraction prompts, one
per type, each asking only for that type's entities.

Token accounting is an estimate (words times a ratio, 1.3 by default) since
the real tokenizer sits behind the API. The budget is the model window minus
the reserved completion length: 4096 - 512 by default. Trimming keeps the
longest prefix of the best-first demonstration ranking that fits; estimates
are computed per block, and a whole prompt never estimates above the sum of
its blocks, so a trimmed prompt always passes the render-time check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .corpus import EntityTypeSchema
from .errors import ConfigError, DataError

DEFAULT_WINDOW = 4096
DEFAULT_RESERVED_OUTPUT = 512
DEFAULT_BUDGET = DEFAULT_WINDOW - DEFAULT_RESERVED_OUTPUT
DEFAULT_TOKENS_PER_WORD = 1.3

EXTRACTION_HEADER = (
    "I am an excellent linguist. The task is to label {description} entities "
    "in the given sentence. Below are some examples."
)
VERIFICATION_HEADER = (
    "The task is to verify whether the word is a {description} entity "
    "extracted from the given sentence."
)
VERIFICATION_QUESTION = (
    'Is the word "{word}" in the input sentence a {description} entity? '
    "Please answer with yes or no."
)

YES = "Yes"
NO = "No"

NEAREST_LAST = "nearest-last"
NEAREST_FIRST = "nearest-first"
DEMO_ORDERS = (NEAREST_LAST, NEAREST_FIRST)


class PromptError(ConfigError):
    pass


class BudgetUnsatisfiable(PromptError):
    pass


class WordNotInSentence(DataError):
    pass


@dataclass(frozen=True)
class Demonstration:
    """One in-context example. For extraction, ``output`` is the encoded
    target text. For verification, ``word`` is the queried surface and
    ``output`` is the answer line (Yes or No)."""

    input: str
    output: str
    word: str | None = None


@dataclass(frozen=True)
class PromptSpec:
    entity_type: EntityTypeSchema
    demos: tuple[Demonstration, ...]
    query: str
    budget: int = DEFAULT_BUDGET
    tokens_per_word: float = DEFAULT_TOKENS_PER_WORD

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise PromptError(f"budget must be positive, got {self.budget}")
        if self.tokens_per_word <= 0:
            raise PromptError(f"tokens_per_word must be positive, got {self.tokens_per_word}")


def estimate_tokens(text: str, ratio: float = DEFAULT_TOKENS_PER_WORD) -> int:
    """ceil(word count x ratio). Whitespace-split words; a plugged-in exact
    tokenizer can replace this wherever a counter is accepted."""
    if ratio <= 0:
        raise PromptError(f"ratio must be positive, got {ratio}")
    words = len(text.split())
    # round first: ieee noise like 100 * 1.3 == 130.00000000000001 must not
    # push the ceiling up a token
    return math.ceil(round(words * ratio, 9))


def extraction_demo_block(demo: Demonstration) -> str:
    return f"Input: {demo.input}\nOutput: {demo.output}\n"


def extraction_fixed_parts(entity_type: EntityTypeSchema, query: str) -> str:
    header = EXTRACTION_HEADER.format(description=entity_type.description)
    return f"{header}\nInput: {query}\nOutput:"


def render_extraction_prompt(spec: PromptSpec) -> str:
    """Header, demonstration blocks in the given order, then the query block
    ending exactly with "Output:". Raises BudgetUnsatisfiable when the
    result estimates over ``spec.budget`` (zero-demo prompts included)."""
    header = EXTRACTION_HEADER.format(description=spec.entity_type.description)
    parts = [header, "\n"]
    for demo in spec.demos:
        parts.append(extraction_demo_block(demo))
    parts.append(f"Input: {spec.query}\nOutput:")
    prompt = "".join(parts)
    used = estimate_tokens(prompt, spec.tokens_per_word)
    if used > spec.budget:
        raise BudgetUnsatisfiable(
            f"prompt estimates {used} tokens against a budget of {spec.budget} "
            f"({len(spec.demos)} demos)"
        )
    return prompt


def verification_demo_block(entity_type: EntityTypeSchema, demo: Demonstration) -> str:
    question = VERIFICATION_QUESTION.format(
        word=demo.word, description=entity_type.description
    )
    return f"The input sentence: {demo.input}\n{question}\n{demo.output}\n"


def verification_fixed_parts(entity_type: EntityTypeSchema, sentence: str, word: str) -> str:
    header = VERIFICATION_HEADER.format(description=entity_type.description)
    question = VERIFICATION_QUESTION.format(word=word, description=entity_type.description)
    return f"{header}\nThe input sentence: {sentence}\n{question}"


def render_verification_prompt(
    entity_type: EntityTypeSchema,
    demos: Sequence[Demonstration],
    sentence: str,
    word: str,
    *,
    budget: int | None = None,
    tokens_per_word: float = DEFAULT_TOKENS_PER_WORD,
) -> str:
    """Header, Yes/No demonstration triplets, then the query pair; the
    prompt ends after the question line. ``word`` must occur in ``sentence``
    as a contiguous token run."""
    if not _occurs(word, sentence):
        raise WordNotInSentence(f"word {word!r} does not occur in {sentence!r}")
    header = VERIFICATION_HEADER.format(description=entity_type.description)
    parts = [header, "\n"]
    for demo in demos:
        if demo.word is None:
            raise PromptError("verification demo lacks a word")
        parts.append(verification_demo_block(entity_type, demo))
    question = VERIFICATION_QUESTION.format(word=word, description=entity_type.description)
    parts.append(f"The input sentence: {sentence}\n{question}")
    prompt = "".join(parts)
    if budget is not None:
        used = estimate_tokens(prompt, tokens_per_word)
        if used > budget:
            raise BudgetUnsatisfiable(
                f"verification prompt estimates {used} tokens against {budget}"
            )
    return prompt


def _occurs(word: str, sentence: str) -> bool:
    w = word.split()
    s = sentence.split()
    if not w:
        return False
    return any(s[i : i + len(w)] == w for i in range(len(s) - len(w) + 1))


def trim_to_budget(
    demos: Sequence[Demonstration],
    fixed_parts_tokens: int,
    budget: int,
    *,
    tokens_per_word: float = DEFAULT_TOKENS_PER_WORD,
    block_renderer: Callable[[Demonstration], str] = extraction_demo_block,
) -> list[Demonstration]:
    """Longest prefix of the best-first ranking whose blocks fit alongside
    the fixed parts. May return an empty list; never raises."""
    kept: list[Demonstration] = []
    used = fixed_parts_tokens
    for demo in demos:
        cost = estimate_tokens(block_renderer(demo), tokens_per_word)
        if used + cost > budget:
            break
        used += cost
        kept.append(demo)
    return kept


def order_demos(ranked: Sequence[Demonstration], order: str) -> list[Demonstration]:
    """Turn a best-first ranking into prompt order. nearest-last puts the
    best demonstration adjacent to the query."""
    if order == NEAREST_LAST:
        return list(reversed(ranked))
    if order == NEAREST_FIRST:
        return list(ranked)
    raise PromptError(f"unknown demo order {order!r}")
