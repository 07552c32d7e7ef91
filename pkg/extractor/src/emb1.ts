/** EMB1 binary vector files.
 *
 * Layout (little-endian throughout):
 *
 *     magic   4 bytes   "EMB1"
 *     dim     u32       vector dimensionality
 *     level   u32       0 = sentence vectors, 1 = token vectors
 *     count   u64       number of records
 *
 * followed by `count` records of
 *
 *     sentence_id  u32
 *     token_index  u32   0xFFFFFFFF for sentence-level records
 *     values       dim x f32
 *
 * Files are written atomically: the payload goes to a sibling temp file
 * which is renamed over the target, so a crashed run never leaves a
 * truncated file behind.
 */

import { randomBytes } from "node:crypto";
import { closeSync, openSync, readFileSync, renameSync, unlinkSync, writeSync } from "node:fs";
import { dirname, join } from "node:path";

import { CorpusFormatFailure } from "./errors.js";

export const MAGIC = "EMB1";
export const SENTENCE_LEVEL = 0;
export const TOKEN_LEVEL = 1;
export const NO_TOKEN = 0xffffffff;

const HEADER_SIZE = 4 + 4 + 4 + 8;

export interface VectorRecord {
  readonly sentenceId: number;
  readonly tokenIndex: number;
  readonly values: Float64Array;
}

export interface Emb1File {
  readonly dim: number;
  readonly level: number;
  readonly records: VectorRecord[];
}

export function writeEmb1(
  path: string,
  dim: number,
  level: number,
  records: readonly VectorRecord[],
): void {
  const header = Buffer.alloc(HEADER_SIZE);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(dim, 4);
  header.writeUInt32LE(level, 8);
  header.writeBigUInt64LE(BigInt(records.length), 12);

  const recordSize = 8 + 4 * dim;
  const body = Buffer.alloc(recordSize * records.length);
  let offset = 0;
  for (const rec of records) {
    if (rec.values.length !== dim) {
      throw new Error(
        `record for sentence ${rec.sentenceId} has ${rec.values.length} values, expected ${dim}`,
      );
    }
    body.writeUInt32LE(rec.sentenceId >>> 0, offset);
    body.writeUInt32LE(rec.tokenIndex >>> 0, offset + 4);
    offset += 8;
    for (const value of rec.values) {
      body.writeFloatLE(value, offset);
      offset += 4;
    }
  }

  const tmp = join(dirname(path), `.emb1-${randomBytes(6).toString("hex")}.tmp`);
  const fd = openSync(tmp, "w");
  try {
    writeSync(fd, header);
    writeSync(fd, body);
  } catch (err) {
    closeSync(fd);
    unlinkSync(tmp);
    throw err;
  }
  closeSync(fd);
  renameSync(tmp, path);
}

export function readEmb1(path: string): Emb1File {
  const raw = readFileSync(path);
  if (raw.length < HEADER_SIZE || raw.toString("ascii", 0, 4) !== MAGIC) {
    throw new CorpusFormatFailure(`${path}: not an EMB1 file`);
  }
  const dim = raw.readUInt32LE(4);
  const level = raw.readUInt32LE(8);
  const count = Number(raw.readBigUInt64LE(12));
  const recordSize = 8 + 4 * dim;
  if (raw.length !== HEADER_SIZE + recordSize * count) {
    throw new CorpusFormatFailure(
      `${path}: expected ${HEADER_SIZE + recordSize * count} bytes for ${count} records, got ${raw.length}`,
    );
  }
  const records: VectorRecord[] = [];
  let offset = HEADER_SIZE;
  for (let i = 0; i < count; i++) {
    const sentenceId = raw.readUInt32LE(offset);
    const tokenIndex = raw.readUInt32LE(offset + 4);
    offset += 8;
    const values = new Float64Array(dim);
    for (let j = 0; j < dim; j++) {
      values[j] = raw.readFloatLE(offset);
      offset += 4;
    }
    records.push({ sentenceId, tokenIndex, values });
  }
  return { dim, level, records };
}
