"""Command line driver.

Five subcommands bind the library into reproducible runs:

  validate-corpus  parse a corpus and print summary stats
  index            sanity-check an EMB1 file against a corpus
  run              extract entities for a test corpus, write JSONL + manifest
  score            compare a prediction file against gold, print P/R/F1
  ablate           sweep k or format values, write a results CSV

Runs are configured by a TOML file whose top-level keys mirror the run
config, with [paths], [backend], and optional [verify] tables for file
locations and backend selection. Unknown keys anywhere are rejected.
``--override key=value`` (dotted keys reach into tables) patches the file
before validation and is recorded in the manifest.

Exit codes: 1 usage, 2 config, 3 data, 4 backend.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:

    import tomli as tomllib

from .corpus import SchemaSet, builtin_schema, corpus_report, load_corpus
from .embedstore import read_emb1
from .errors import ConfigError, DataError, IclnerError, UsageError, exit_code_for
from .evalkit import ablate_format, ablate_kshot, score, score_line, write_results_csv
from .llmgate import (
    DEFAULT_API_BASE,
    ENV_API_BASE,
    ENV_API_KEY,
    Backend,
    CachingBackend,
    ConcurrencyLimiter,
    CopyMock,
    OpenAICompletionBackend,
    OracleMock,
    OverpredictMock,
    ScriptedMock,
    YesNoOracleMock,
)
from .pipeline import (
    RunConfig,
    dump_predictions,
    load_predictions,
    load_stores,
    run_corpus,
    write_manifest,
)


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so main() owns the
    exit code."""

    def error(self, message):
        raise UsageError(message)


# --- config file ------------------------------------------------------------

_PATH_KEYS = frozenset(
    {
        "schema",
        "train",
        "test",
        "train_sentence_emb",
        "train_token_emb",
        "test_sentence_emb",
        "test_token_emb",
        "candidates",
        "cache_dir",
        "predictions",
        "manifest",
    }
)

# keys allowed in a backend table, per kind
_BACKEND_KEYS = {
    "openai": frozenset({"model", "api_base", "timeout", "max_attempts", "requests_per_second"}),
    "oracle": frozenset(),
    "overpredict": frozenset({"extra_rate", "seed"}),
    "yesno": frozenset(),
    "copy": frozenset(),
    "scripted": frozenset({"responses"}),
}


def _read_config(path) -> dict:
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")


def _coerce(raw: str):
    text = raw.strip()
    if text.lower() == "true":
        return True
    if text.lower() == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def _apply_override(data: dict, raw: str) -> None:
    if "=" not in raw:
        raise UsageError(f"override {raw!r} is not key=value")
    dotted, value = raw.split("=", 1)
    parts = [p.strip() for p in dotted.split(".")]
    if not all(parts):
        raise UsageError(f"override {raw!r} has an empty key")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {dotted!r} descends into non-table key {part!r}")
        node = child
    node[parts[-1]] = _coerce(value)


def _split_config(data: dict) -> tuple[RunConfig, dict, dict, dict | None]:
    """Split a config mapping into (run config, paths, backend, verify)."""
    rest = dict(data)
    paths = rest.pop("paths", {})
    backend = rest.pop("backend", {})
    verify = rest.pop("verify", None)
    for name, section in (("paths", paths), ("backend", backend)):
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
    if verify is not None and not isinstance(verify, dict):
        raise ConfigError("[verify] must be a table")
    for key in paths:
        if key not in _PATH_KEYS:
            raise ConfigError(f"unknown paths key {key!r}")
    config = RunConfig.from_dict(rest)
    return config, paths, backend, verify


def _load_schema(spec: str) -> SchemaSet:
    """A schema argument is either a bundled schema name or a JSON file path."""
    if spec.endswith(".json") or os.sep in spec:
        return SchemaSet.from_json(spec)
    return builtin_schema(spec)


def _require_paths(paths: dict, keys: tuple[str, ...]) -> None:
    missing = [k for k in keys if not paths.get(k)]
    if missing:
        raise ConfigError(f"[paths] is missing required keys: {', '.join(missing)}")


def _build_backend(section: dict, *, config: RunConfig, test_corpus, schema) -> Backend:
    kind = section.get("kind")
    if kind is None:
        raise ConfigError("backend table needs a 'kind' key")
    allowed = _BACKEND_KEYS.get(kind)
    if allowed is None:
        raise ConfigError(
            f"unknown backend kind {kind!r}; choose from {', '.join(sorted(_BACKEND_KEYS))}"
        )
    extras = set(section) - allowed - {"kind"}
    if extras:
        raise ConfigError(f"backend kind {kind!r} does not accept: {', '.join(sorted(extras))}")

    if kind == "openai":
        model = section.get("model")
        if not model:
            raise ConfigError("backend kind 'openai' needs a 'model' key")
        api_key = os.environ.get(ENV_API_KEY)
        if not api_key:
            raise ConfigError(f"backend kind 'openai' needs {ENV_API_KEY} set")
        base = section.get("api_base") or os.environ.get(ENV_API_BASE) or DEFAULT_API_BASE
        kwargs = {}
        for key in ("timeout", "max_attempts", "requests_per_second"):
            if key in section:
                kwargs[key] = section[key]
        return OpenAICompletionBackend(base, api_key, model, **kwargs)
    if kind == "oracle":
        return OracleMock(test_corpus, schema, config.format)
    if kind == "overpredict":
        for key in ("extra_rate", "seed"):
            if key not in section:
                raise ConfigError(f"backend kind 'overpredict' needs a {key!r} key")
        return OverpredictMock(test_corpus, schema, section["extra_rate"], section["seed"])
    if kind == "yesno":
        return YesNoOracleMock(test_corpus, schema)
    if kind == "copy":
        return CopyMock()
    responses_path = section.get("responses")
    if not responses_path:
        raise ConfigError("backend kind 'scripted' needs a 'responses' key")
    try:
        with open(responses_path, "r", encoding="utf-8") as handle:
            responses = json.load(handle)
    except FileNotFoundError:
        raise DataError(f"responses file not found: {responses_path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{responses_path}: {exc}")
    if not isinstance(responses, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in responses.items()
    ):
        raise DataError(f"{responses_path}: expected a JSON object of strings")
    return ScriptedMock(responses)


def _wrap_backend(inner: Backend, *, cache_dir, workers: int) -> Backend:
    if workers > 1:
        inner = ConcurrencyLimiter(inner, workers)
    if cache_dir:
        inner = CachingBackend(inner, cache_dir)
    return inner


def _load_run_inputs(paths: dict):
    schema = _load_schema(str(paths["schema"]))
    train = load_corpus(paths["train"], schema)
    test = load_corpus(paths["test"], schema)
    stores = load_stores(
        train_sentence=paths.get("train_sentence_emb"),
        train_token=paths.get("train_token_emb"),
        test_sentence=paths.get("test_sentence_emb"),
        test_token=paths.get("test_token_emb"),
        candidates=paths.get("candidates"),
    )
    return schema, train, test, stores


# --- subcommands ------------------------------------------------------------


def cmd_validate_corpus(args) -> int:
    schema = _load_schema(args.schema)
    corp = load_corpus(args.path, schema, strict=args.strict)
    report = corpus_report(corp)
    print(f"mode: {report['mode']}")
    print(f"sentences: {report['sentences']}")
    print(f"tokens: {report['tokens']}")
    print(f"entities: {report['entities']}")
    for name, count in report["per_type"].items():
        print(f"  {name}: {count}")
    return 0


def cmd_index(args) -> int:
    schema = _load_schema(args.schema)
    corp = load_corpus(args.corpus, schema)
    level, dim, records = read_emb1(args.emb)
    if level != args.level:
        raise DataError(f"{args.emb}: file is {level}-level, --level asked for {args.level}")

    problems = []
    corpus_ids = set(corp.ids())
    if level == "sentence":
        seen = [r.sentence_id for r in records]
        extra = sorted(set(seen) - corpus_ids)
        missing = sorted(corpus_ids - set(seen))
        expected = len(corp)
    else:
        per_sid: dict[int, int] = {}
        for record in records:
            per_sid[record.sentence_id] = per_sid.get(record.sentence_id, 0) + 1
        extra = sorted(set(per_sid) - corpus_ids)
        missing = sorted(corpus_ids - set(per_sid))
        expected = corp.total_tokens()
        for sent in corp:
            got = per_sid.get(sent.id, 0)
            if got and got != len(sent.tokens):
                problems.append(f"sentence {sent.id}: {got} records for {len(sent.tokens)} tokens")
    if missing:
        problems.append(f"missing sentence ids: {_preview(missing)}")
    if extra:
        problems.append(f"unknown sentence ids: {_preview(extra)}")

    print(f"level: {level}")
    print(f"dim: {dim}")
    print(f"records: {len(records)} (expected {expected})")
    if problems or len(records) != expected:
        if len(records) != expected:
            problems.insert(0, f"record count {len(records)} != expected {expected}")
        raise DataError(f"{args.emb}: " + "; ".join(problems))
    print("coverage: complete")
    return 0


def _preview(ids, limit=5):
    shown = ", ".join(str(i) for i in ids[:limit])
    return shown + (f", ... ({len(ids)} total)" if len(ids) > limit else "")


def cmd_run(args) -> int:
    data = _read_config(args.config)
    for raw in args.override:
        _apply_override(data, raw)
    if args.workers is not None:
        data["workers"] = args.workers
    config, paths, backend_section, verify_section = _split_config(data)
    _require_paths(paths, ("schema", "train", "test", "predictions"))
    schema, train, test, stores = _load_run_inputs(paths)

    cache_dir = paths.get("cache_dir")
    backend = _wrap_backend(
        _build_backend(backend_section, config=config, test_corpus=test, schema=schema),
        cache_dir=cache_dir,
        workers=config.workers,
    )
    verify_backend = None
    if verify_section is not None:
        verify_backend = _wrap_backend(
            _build_backend(verify_section, config=config, test_corpus=test, schema=schema),
            cache_dir=cache_dir,
            workers=config.workers,
        )

    predictions, manifest = run_corpus(
        test, train, schema, config, backend, verify_backend=verify_backend, stores=stores
    )
    manifest["cli"] = {
        "config_file": str(args.config),
        "overrides": list(args.override),
        "paths": {k: str(v) for k, v in sorted(paths.items())},
        "backend": backend_section,
        "verify": verify_section,
    }

    pred_path = paths["predictions"]
    manifest_path = paths.get("manifest") or str(Path(pred_path).with_suffix("")) + ".manifest.json"
    dump_predictions(predictions, pred_path)
    write_manifest(manifest, manifest_path)

    spans = sum(len(p.spans) for p in predictions)
    print(f"{len(predictions)} sentences, {spans} spans")
    cache = manifest.get("cache")
    if cache:
        print(f"cache: {cache['hits']} hits, {cache['misses']} misses")
    print(f"wrote {pred_path}")
    print(f"wrote {manifest_path}")
    return 0


def cmd_score(args) -> int:
    schema = _load_schema(args.schema)
    gold = load_corpus(args.gold, schema)
    predictions = load_predictions(args.pred)
    report = score(predictions, gold)

    width = max([len(n) for n in report.per_type] + [5])
    for name, triple in report.per_type.items():
        print(
            f"{name:>{width}}  {score_line(triple)}"
            f"  tp={triple.tp} fp={triple.fp} fn={triple.fn}"
        )
    micro = report.micro
    print(f"{'micro':>{width}}  {score_line(micro)}  tp={micro.tp} fp={micro.fp} fn={micro.fn}")

    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["type", "precision", "recall", "f1", "tp", "fp", "fn"])
            rows = list(report.per_type.items()) + [("micro", micro)]
            for name, t in rows:
                writer.writerow(
                    [name, f"{t.precision:.4f}", f"{t.recall:.4f}", f"{t.f1:.4f}", t.tp, t.fp, t.fn]
                )
        print(f"wrote {args.csv}")
    return 0


def _parse_sweep(raw: str) -> tuple[str, list[str]]:
    if "=" not in raw:
        raise UsageError(f"sweep {raw!r} is not key=v1,v2,...")
    key, _, values = raw.partition("=")
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        raise UsageError(f"sweep {raw!r} lists no values")
    return key.strip(), items


def cmd_ablate(args) -> int:
    data = _read_config(args.config)
    for raw in args.override:
        _apply_override(data, raw)
    if args.workers is not None:
        data["workers"] = args.workers
    config, paths, backend_section, verify_section = _split_config(data)
    _require_paths(paths, ("schema", "train", "test"))
    schema, train, test, stores = _load_run_inputs(paths)
    dataset = args.dataset or Path(str(paths["test"])).stem

    cache_dir = paths.get("cache_dir")

    def factory_for(section):
        def factory(cfg: RunConfig) -> Backend:
            return _wrap_backend(
                _build_backend(section, config=cfg, test_corpus=test, schema=schema),
                cache_dir=cache_dir,
                workers=cfg.workers,
            )

        return factory

    verify_factory = factory_for(verify_section) if verify_section is not None else None

    key, values = _parse_sweep(args.sweep)
    if key == "k":
        try:
            ks = [int(v) for v in values]
        except ValueError:
            raise UsageError(f"sweep k values must be integers: {args.sweep!r}")
        rows = ablate_kshot(
            test,
            train,
            schema,
            config,
            factory_for(backend_section),
            ks=ks,
            verify_backend_factory=verify_factory,
            stores=stores,
            dataset=dataset,
        )
    elif key == "format":
        rows = ablate_format(
            test,
            train,
            schema,
            config,
            factory_for(backend_section),
            formats=values,
            verify_backend_factory=verify_factory,
            stores=stores,
            dataset=dataset,
        )
    else:
        raise UsageError(f"unknown sweep key {key!r}; expected 'k' or 'format'")

    write_results_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# --- entry point ------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="iclner", description="In-context learning NER pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("validate-corpus", help="parse a corpus and print summary stats")
    p.add_argument("path")
    p.add_argument("--schema", default="conll2003", help="bundled schema name or JSON file")
    p.add_argument("--strict", action="store_true", help="reject repairable tag glitches")
    p.set_defaults(fn=cmd_validate_corpus)

    p = sub.add_parser("index", help="sanity-check an EMB1 file against a corpus")
    p.add_argument("--level", required=True, choices=["sentence", "token"])
    p.add_argument("--emb", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", default="conll2003")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("run", help="extract entities, write predictions JSONL + manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("score", help="score a prediction file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--schema", default="conll2003")
    p.add_argument("--csv", default=None, help="also write a per-type CSV here")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("ablate", help="sweep k or format, write a results CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True, metavar="k=2,4,8 | format=atmarker,bmes")
    p.add_argument("--out", default="results.csv")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--dataset", default=None, help="dataset column value, default test stem")
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except IclnerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    raise SystemExit(main())
