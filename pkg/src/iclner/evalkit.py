"""Span-level scoring, evaluation subset construction, and sweep drivers.

Scoring is exact-match: a predicted span counts as a true positive only when
its (start, end, type) triple matches an unclaimed gold span of the same
sentence. Subset builders cover sampled test sets, nested low-resource
training splits, and the small seedset holding one sentence with and one
without each entity type. Sweep drivers rerun the pipeline across k values
or output formats and emit plot-ready CSV rows.
"""

from __future__ import annotations

import csv
import random
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import LabeledCorpus, SchemaSet
from .errors import ConfigError, DataError
from .llmgate import Backend
from .pipeline import PredictionSet, RunConfig, StoreSet, run_corpus


class UnknownSentenceId(DataError):
    """A prediction references a sentence the gold corpus does not have."""


class Unsatisfiable(DataError):
    """The corpus cannot supply the requested seedset."""


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "ScoreTriple":
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        return cls(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


@dataclass(frozen=True)
class ScoreReport:
    micro: ScoreTriple
    per_type: Mapping[str, ScoreTriple]


def score(predictions: Sequence[PredictionSet], gold: LabeledCorpus) -> ScoreReport:
    """Exact-match span scores, micro plus per type.

    Duplicate predicted spans are collapsed first so one gold span cannot be
    claimed twice; a gold sentence with no prediction set contributes all of
    its spans as false negatives."""
    gold_ids = set(gold.ids())
    seen: set[int] = set()
    for pred in predictions:
        if pred.sentence_id not in gold_ids:
            raise UnknownSentenceId(f"prediction for unknown sentence id {pred.sentence_id}")
        if pred.sentence_id in seen:
            raise DataError(f"two prediction sets for sentence id {pred.sentence_id}")
        seen.add(pred.sentence_id)
    by_id = {pred.sentence_id: pred for pred in predictions}

    counts: dict[str, list[int]] = {}

    def bucket(type: str) -> list[int]:
        return counts.setdefault(type, [0, 0, 0])  # tp, fp, fn

    for sid in gold.ids():
        gold_left = Counter(sp.key() for sp in gold.spans_of(sid))
        pred = by_id.get(sid)
        pred_keys = sorted({sp.key() for sp in pred.spans}) if pred else []
        for key in pred_keys:
            if gold_left[key] > 0:
                gold_left[key] -= 1
                bucket(key[2])[0] += 1
            else:
                bucket(key[2])[1] += 1
        for (_, _, type), left in gold_left.items():
            bucket(type)[2] += left

    per_type = {
        type: ScoreTriple.from_counts(tp, fp, fn)
        for type, (tp, fp, fn) in sorted(counts.items())
    }
    micro = ScoreTriple.from_counts(
        sum(c[0] for c in counts.values()),
        sum(c[1] for c in counts.values()),
        sum(c[2] for c in counts.values()),
    )
    return ScoreReport(micro=micro, per_type=per_type)


def score_line(triple: ScoreTriple) -> str:
    return f"P/R/F1: {triple.precision:.4f}/{triple.recall:.4f}/{triple.f1:.4f}"


def sample_test_subset(corpus: LabeledCorpus, n: int, seed: int) -> LabeledCorpus:
    """n distinct sentences drawn without replacement, kept in corpus order,
    reproducible from the seed."""
    if n < 0 or n > len(corpus):
        raise DataError(f"cannot sample {n} of {len(corpus)} sentences")
    chosen = set(random.Random(seed).sample(list(corpus.ids()), n))
    return corpus.subset([sid for sid in corpus.ids() if sid in chosen])


def low_resource_splits(
    corpus: LabeledCorpus, sizes: Sequence[int], seed: int
) -> list[LabeledCorpus]:
    """Nested training subsets: one seeded draw orders the corpus, each size
    takes a prefix, so every smaller split is contained in every larger one."""
    if not sizes:
        raise ConfigError("no split sizes given")
    for a, b in zip(sizes, sizes[1:]):
        if a >= b:
            raise ConfigError(f"split sizes must increase, got {list(sizes)}")
    if sizes[0] < 1 or sizes[-1] > len(corpus):
        raise ConfigError(
            f"split sizes must fit 1..{len(corpus)}, got {list(sizes)}"
        )
    order = random.Random(seed).sample(list(corpus.ids()), sizes[-1])
    splits = []
    for n in sizes:
        chosen = set(order[:n])
        splits.append(corpus.subset([sid for sid in corpus.ids() if sid in chosen]))
    return splits


def build_seedset(corpus: LabeledCorpus, schema: SchemaSet, seed: int) -> LabeledCorpus:
    """For every type in the schema, one sentence containing it and one free
    of it, all distinct: 2x len(schema) sentences. Draws are seeded; a draw
    that runs a pool dry is retried with the next derived seed before giving
    up."""
    positives: dict[str, list[int]] = {}
    negatives: dict[str, list[int]] = {}
    for etype in schema:
        positives[etype.name] = [
            sid for sid in corpus.ids() if corpus.spans_of(sid, etype.name)
        ]
        negatives[etype.name] = [
            sid for sid in corpus.ids() if not corpus.spans_of(sid, etype.name)
        ]
        if not positives[etype.name]:
            raise Unsatisfiable(f"no sentence contains a {etype.name} entity")
        if not negatives[etype.name]:
            raise Unsatisfiable(f"every sentence contains a {etype.name} entity")

    for attempt in range(32):
        rng = random.Random(f"{seed}:{attempt}")
        chosen: list[int] = []
        used: set[int] = set()
        complete = True
        for etype in schema:
            for pool in (positives[etype.name], negatives[etype.name]):
                left = [sid for sid in pool if sid not in used]
                if not left:
                    complete = False
                    break
                pick = rng.choice(left)
                chosen.append(pick)
                used.add(pick)
            if not complete:
                break
        if complete:
            return corpus.subset(chosen)
    raise Unsatisfiable(
        f"could not draw {2 * len(schema)} distinct sentences covering every type"
    )


RESULT_COLUMNS = (
    "run_id",
    "dataset",
    "retrieval",
    "format",
    "k",
    "verification",
    "precision",
    "recall",
    "f1",
    "tp",
    "fp",
    "fn",
)


def result_row(dataset: str, config: RunConfig, triple: ScoreTriple) -> dict:
    return {
        "run_id": config.config_hash()[:12],
        "dataset": dataset,
        "retrieval": config.retrieval,
        "format": config.format,
        "k": config.k,
        "verification": config.verification,
        "precision": triple.precision,
        "recall": triple.recall,
        "f1": triple.f1,
        "tp": triple.tp,
        "fp": triple.fp,
        "fn": triple.fn,
    }


def run_and_score(
    test: LabeledCorpus,
    train: LabeledCorpus,
    schema: SchemaSet,
    config: RunConfig,
    backend: Backend,
    *,
    verify_backend: Backend | None = None,
    stores: StoreSet | None = None,
    dataset: str = "corpus",
) -> dict:
    predictions, _ = run_corpus(
        test, train, schema, config, backend,
        verify_backend=verify_backend, stores=stores,
    )
    return result_row(dataset, config, score(predictions, test).micro)


BackendFactory = Callable[[RunConfig], Backend]


def _sweep(
    test: LabeledCorpus,
    train: LabeledCorpus,
    schema: SchemaSet,
    configs: Iterable[RunConfig],
    backend_factory: BackendFactory,
    verify_backend_factory: BackendFactory | None,
    stores: StoreSet | None,
    dataset: str,
) -> list[dict]:
    rows = []
    for config in configs:
        rows.append(
            run_and_score(
                test, train, schema, config, backend_factory(config),
                verify_backend=(
                    verify_backend_factory(config) if verify_backend_factory else None
                ),
                stores=stores,
                dataset=dataset,
            )
        )
    return rows


def ablate_kshot(
    test: LabeledCorpus,
    train: LabeledCorpus,
    schema: SchemaSet,
    config: RunConfig,
    backend_factory: BackendFactory,
    ks: Sequence[int],
    retrievals: Sequence[str] | None = None,
    *,
    verify_backend_factory: BackendFactory | None = None,
    stores: StoreSet | None = None,
    dataset: str = "corpus",
) -> list[dict]:
    """One run per (retrieval strategy, k), scored micro."""
    if not ks:
        raise ConfigError("no k values given")
    configs = [
        replace(config, retrieval=retrieval, k=k)
        for retrieval in (retrievals or [config.retrieval])
        for k in ks
    ]
    return _sweep(
        test, train, schema, configs, backend_factory,
        verify_backend_factory, stores, dataset,
    )


def ablate_format(
    test: LabeledCorpus,
    train: LabeledCorpus,
    schema: SchemaSet,
    config: RunConfig,
    backend_factory: BackendFactory,
    formats: Sequence[str],
    *,
    verify_backend_factory: BackendFactory | None = None,
    stores: StoreSet | None = None,
    dataset: str = "corpus",
) -> list[dict]:
    """One run per output format on the same subset and backend family."""
    if not formats:
        raise ConfigError("no formats given")
    configs = [replace(config, format=f) for f in formats]
    return _sweep(
        test, train, schema, configs, backend_factory,
        verify_backend_factory, stores, dataset,
    )


def write_results_csv(rows: Sequence[Mapping[str, object]], path: str | Path) -> None:
    """Fixed column order, scores at four decimals, LF line ends: equal rows
    always produce equal bytes."""
    for row in rows:
        missing = set(RESULT_COLUMNS) - set(row)
        extra = set(row) - set(RESULT_COLUMNS)
        if missing or extra:
            raise ConfigError(
                f"result row columns off: missing {sorted(missing)}, extra {sorted(extra)}"
            )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for col in ("precision", "recall", "f1"):
                out[col] = f"{float(row[col]):.4f}"
            writer.writerow(out)
