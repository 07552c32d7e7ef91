/** Corpus readers. Only sentence ids and tokens matter here; gold labels
 * are passed through untouched by ignoring them.
 *
 * Two formats, chosen by extension: `.jsonl` holds one object per line with
 * at least `id` and `tokens`; anything else is two-column CoNLL ("token
 * TAG" lines, blank line between sentences) with ids assigned sequentially
 * from 0 in file order, matching the downstream consumer.
 */

import { readFileSync } from "node:fs";

import { CorpusFormatFailure } from "./errors.js";

export interface SentenceRec {
  id: number;
  tokens: string[];
}

export function readCorpus(path: string): SentenceRec[] {
  const text = readFileSync(path, "utf-8");
  return path.endsWith(".jsonl") ? parseJsonl(path, text) : parseConll(path, text);
}

function parseConll(path: string, text: string): SentenceRec[] {
  const sentences: SentenceRec[] = [];
  let tokens: string[] = [];
  const flush = () => {
    if (tokens.length > 0) {
      sentences.push({ id: sentences.length, tokens });
      tokens = [];
    }
  };
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = (lines[i] ?? "").replace(/\r$/, "");
    if (line.trim() === "") {
      flush();
      continue;
    }
    const fields = line.split(/\s+/).filter((f) => f !== "");
    if (fields.length !== 2) {
      throw new CorpusFormatFailure(
        `${path}:${i + 1}: expected 'token TAG', got ${fields.length} fields`,
      );
    }
    tokens.push(fields[0] as string);
  }
  flush();
  return sentences;
}

function parseJsonl(path: string, text: string): SentenceRec[] {
  const sentences: SentenceRec[] = [];
  const seen = new Set<number>();
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = (lines[i] ?? "").trim();
    if (line === "") {
      continue;
    }
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch (err) {
      throw new CorpusFormatFailure(`${path}:${i + 1}: bad JSON: ${String(err)}`);
    }
    if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
      throw new CorpusFormatFailure(`${path}:${i + 1}: expected an object`);
    }
    const record = obj as Record<string, unknown>;
    const id = record["id"];
    const tokens = record["tokens"];
    if (typeof id !== "number" || !Number.isInteger(id) || id < 0) {
      throw new CorpusFormatFailure(`${path}:${i + 1}: id must be a non-negative integer`);
    }
    if (seen.has(id)) {
      throw new CorpusFormatFailure(`${path}:${i + 1}: duplicate sentence id ${id}`);
    }
    seen.add(id);
    if (!Array.isArray(tokens) || tokens.length === 0 || !tokens.every((t) => typeof t === "string")) {
      throw new CorpusFormatFailure(`${path}:${i + 1}: tokens must be a non-empty list of strings`);
    }
    sentences.push({ id, tokens: tokens as string[] });
  }
  return sentences;
}
