import { createHash } from "node:crypto";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { NO_TOKEN, SENTENCE_LEVEL, TOKEN_LEVEL, readEmb1 } from "../src/emb1.js";
import { TokenAlignmentFailure } from "../src/errors.js";
import { extract, type ExtractionJob } from "../src/extract.js";

let dir: string;

beforeEach(() => {
  dir = mkdtempSync(join(tmpdir(), "extract-"));
});

afterEach(() => {
  rmSync(dir, { recursive: true, force: true });
});

const CONLL = [
  "China B-LOC",
  "says O",
  "Taiwan B-LOC",
  "spoils O",
  "atmosphere O",
  "",
  "Rare O",
  "song O",
  "",
  "Germany B-LOC",
  "imported O",
  "beef O",
  "",
].join("\n");

function corpusFile(name: string, content: string): string {
  const path = join(dir, name);
  writeFileSync(path, content);
  return path;
}

function job(overrides: Partial<ExtractionJob>): ExtractionJob {
  return {
    corpus: corpusFile("train.conll", CONLL),
    model: "hash",
    level: "sentence",
    out: join(dir, "out.emb1"),
    pooling: "mean",
    dim: 64,
    batchSize: 32,
    ...overrides,
  };
}

function sha256(path: string): string {
  return createHash("sha256").update(readFileSync(path)).digest("hex");
}

describe("sentence-level extraction", () => {
  it("writes one record per sentence with the no-token sentinel", () => {
    const report = extract(job({}));
    expect(report).toEqual({ sentences: 3, records: 3, dim: 64, level: SENTENCE_LEVEL });

    const out = readEmb1(join(dir, "out.emb1"));
    expect(out.level).toBe(SENTENCE_LEVEL);
    expect(out.records.map((r) => r.sentenceId)).toEqual([0, 1, 2]);
    expect(out.records.every((r) => r.tokenIndex === NO_TOKEN)).toBe(true);
  });

  it("emits finite unit vectors", () => {
    extract(job({}));
    const out = readEmb1(join(dir, "out.emb1"));
    for (const record of out.records) {
      let norm = 0;
      for (const x of record.values) {
        expect(Number.isFinite(x)).toBe(true);
        norm += x * x;
      }
      // values pass through f32, so unit norm holds only to single precision
      expect(Math.sqrt(norm)).toBeCloseTo(1.0, 5);
    }
  });
});

describe("token-level extraction", () => {
  it("writes one record per token in sentence order", () => {
    const report = extract(job({ level: "token" }));
    expect(report.records).toBe(5 + 2 + 3);
    expect(report.level).toBe(TOKEN_LEVEL);

    const out = readEmb1(join(dir, "out.emb1"));
    const bySentence = new Map<number, number[]>();
    for (const record of out.records) {
      const list = bySentence.get(record.sentenceId) ?? [];
      list.push(record.tokenIndex);
      bySentence.set(record.sentenceId, list);
    }
    expect(bySentence.get(0)).toEqual([0, 1, 2, 3, 4]);
    expect(bySentence.get(1)).toEqual([0, 1]);
    expect(bySentence.get(2)).toEqual([0, 1, 2]);
  });

  it("gives identical tokens identical vectors and distinct tokens distinct ones", () => {
    const path = corpusFile("dup.conll", "beef O\nbeef O\nsays O\n\n");
    extract(job({ corpus: path, level: "token" }));
    const out = readEmb1(join(dir, "out.emb1"));
    const [a, b, c] = out.records;
    expect(Array.from(a?.values ?? [])).toEqual(Array.from(b?.values ?? []));
    expect(Array.from(a?.values ?? [])).not.toEqual(Array.from(c?.values ?? []));
  });
});

describe("determinism", () => {
  it("two runs produce byte-identical output", () => {
    const first = join(dir, "one.emb1");
    const second = join(dir, "two.emb1");
    extract(job({ out: first }));
    extract(job({ out: second }));
    expect(sha256(first)).toBe(sha256(second));

    extract(job({ out: first, level: "token" }));
    extract(job({ out: second, level: "token" }));
    expect(sha256(first)).toBe(sha256(second));
  });

  it("batch size does not affect the output", () => {
    const first = join(dir, "one.emb1");
    const second = join(dir, "two.emb1");
    extract(job({ out: first, batchSize: 1 }));
    extract(job({ out: second, batchSize: 100 }));
    expect(sha256(first)).toBe(sha256(second));
  });

  it("pooling mode does affect the output", () => {
    const first = join(dir, "one.emb1");
    const second = join(dir, "two.emb1");
    extract(job({ out: first, pooling: "mean" }));
    extract(job({ out: second, pooling: "first" }));
    expect(sha256(first)).not.toBe(sha256(second));
  });
});

describe("failure modes", () => {
  it("raises TokenAlignmentFailure with the exact sentence and word", () => {
    const path = corpusFile("bad.jsonl", '{"id": 9, "tokens": ["fine", "\\u0001", "after"]}\n');
    let caught: unknown;
    try {
      extract(job({ corpus: path, level: "token" }));
    } catch (err) {
      caught = err;
    }
    expect(caught).toBeInstanceOf(TokenAlignmentFailure);
    const failure = caught as TokenAlignmentFailure;
    expect(failure.sentenceId).toBe(9);
    expect(failure.wordIndex).toBe(1);
    expect(failure.message).toMatch(/sentence 9, word 1/);
  });

  it("does not leave a partial output file on failure", () => {
    const path = corpusFile("bad.jsonl", '{"id": 0, "tokens": ["\\u0001"]}\n');
    const out = join(dir, "never.emb1");
    expect(() => extract(job({ corpus: path, out }))).toThrowError(TokenAlignmentFailure);
    expect(() => readFileSync(out)).toThrowError();
  });
});
