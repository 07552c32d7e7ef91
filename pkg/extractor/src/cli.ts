#!/usr/bin/env node
/** embed-extract: batch-embed a corpus into an EMB1 vector file.
 *
 *     embed-extract --corpus train.conll --level sentence --out train.sent.emb1
 *     embed-extract --corpus train.jsonl --level token --out train.tok.emb1 --dim 128
 *
 * Exit codes: 1 usage, 2 model failure, 3 data failure.
 */

import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import { POOLINGS, type Pooling } from "./encoder.js";
import { CorpusFormatFailure, ModelLoadFailure, TokenAlignmentFailure } from "./errors.js";
import { extract, type Level } from "./extract.js";

const USAGE = `usage: embed-extract --corpus PATH --level {sentence,token} --out PATH
                     [--model ID] [--pooling {mean,first}] [--dim N] [--batch N]

Embeds every sentence (or every token) of a CoNLL/JSONL corpus and writes
the vectors as an EMB1 binary file.`;

class UsageFailure extends Error {}

interface CliJob {
  corpus: string;
  model: string;
  level: Level;
  out: string;
  pooling: Pooling;
  dim: number;
  batchSize: number;
}

function positiveInt(name: string, raw: string): number {
  const value = Number(raw);
  if (!Number.isInteger(value) || value <= 0) {
    throw new UsageFailure(`--${name} must be a positive integer, got '${raw}'`);
  }
  return value;
}

export function parseCli(argv: string[]): CliJob {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        corpus: { type: "string" },
        model: { type: "string", default: "hash" },
        level: { type: "string" },
        out: { type: "string" },
        pooling: { type: "string", default: "mean" },
        dim: { type: "string", default: "64" },
        batch: { type: "string", default: "32" },
        help: { type: "boolean", default: false },
      },
      allowPositionals: false,
    });
  } catch (err) {
    throw new UsageFailure((err as Error).message);
  }
  const values = parsed.values;
  if (values.help) {
    console.log(USAGE);
    process.exit(0);
  }
  for (const required of ["corpus", "level", "out"] as const) {
    if (values[required] === undefined) {
      throw new UsageFailure(`--${required} is required`);
    }
  }
  const level = values.level as string;
  if (level !== "sentence" && level !== "token") {
    throw new UsageFailure(`--level must be 'sentence' or 'token', got '${level}'`);
  }
  const pooling = values.pooling as string;
  if (!POOLINGS.includes(pooling as Pooling)) {
    throw new UsageFailure(`--pooling must be one of ${POOLINGS.join(", ")}, got '${pooling}'`);
  }
  return {
    corpus: values.corpus as string,
    model: values.model as string,
    level,
    out: values.out as string,
    pooling: pooling as Pooling,
    dim: positiveInt("dim", values.dim as string),
    batchSize: positiveInt("batch", values.batch as string),
  };
}

export function main(argv: string[]): number {
  let job: CliJob;
  try {
    job = parseCli(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    console.error(USAGE);
    return 1;
  }
  try {
    const report = extract({
      corpus: job.corpus,
      model: job.model,
      level: job.level,
      out: job.out,
      pooling: job.pooling,
      dim: job.dim,
      batchSize: job.batchSize,
    });
    const unit = report.level === 0 ? "sentence" : "token";
    console.log(
      `wrote ${job.out}: ${report.records} ${unit} vectors ` +
        `(dim ${report.dim}) from ${report.sentences} sentences`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    if (err instanceof ModelLoadFailure) {
      return 2;
    }
    if (err instanceof CorpusFormatFailure || err instanceof TokenAlignmentFailure) {
      return 3;
    }
    if ((err as NodeJS.ErrnoException).code !== undefined) {
      return 3; // file system problem reading the corpus or writing the output
    }
    throw err;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  process.exitCode = main(process.argv.slice(2));
}
