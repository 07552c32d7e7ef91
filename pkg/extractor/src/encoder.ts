/** Deterministic embedding models.
 *
 * The built-in model id is `hash`: a character-trigram hashing encoder.
 * Each word is split into subwords (trigrams over the padded word), every
 * subword maps to a pseudorandom vector seeded by its own hash, and a word
 * vector pools its subword vectors (mean by default, first as the
 * alternative). Everything is pure integer and float arithmetic, so a rerun
 * reproduces the output bit for bit. Any other model id refuses to load:
 * the exporter is checkpoint-agnostic in interface, but this environment
 * ships no inference runtime.
 */

import { ModelLoadFailure } from "./errors.js";

export type Pooling = "mean" | "first";

export const POOLINGS: readonly Pooling[] = ["mean", "first"];

export const HASH_MODEL_ID = "hash";

// sentinel pads mark word boundaries; they cannot collide with word content
// because subwords() filters control characters out of the input first
const PAD_START = "\u0002";
const PAD_END = "\u0003";

export interface EncoderModel {
  readonly id: string;
  readonly dim: number;
  subwords(word: string): string[];
  embedSubword(gram: string): Float64Array;
}

export function loadModel(id: string, dim: number): EncoderModel {
  if (id !== HASH_MODEL_ID) {
    throw new ModelLoadFailure(
      `cannot load model '${id}': only the deterministic '${HASH_MODEL_ID}' encoder is available`,
    );
  }
  if (!Number.isInteger(dim) || dim <= 0) {
    throw new ModelLoadFailure(`embedding dimension must be a positive integer, got ${dim}`);
  }
  return new HashEncoder(dim);
}

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (const ch of text) {
    hash ^= ch.codePointAt(0) as number;
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** mulberry32: tiny, well-studied 32-bit PRNG; plenty for feature hashing. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

class HashEncoder implements EncoderModel {
  readonly id = HASH_MODEL_ID;

  constructor(readonly dim: number) {}

  subwords(word: string): string[] {
    // control characters carry no signal and would collide with the pads
    const usable = Array.from(word).filter((ch) => (ch.codePointAt(0) as number) > 0x1f);
    if (usable.length === 0) {
      return [];
    }
    const padded = [PAD_START, ...usable, PAD_END];
    const grams: string[] = [];
    for (let i = 0; i + 3 <= padded.length; i++) {
      grams.push(padded.slice(i, i + 3).join(""));
    }
    return grams;
  }

  embedSubword(gram: string): Float64Array {
    const next = mulberry32(fnv1a(gram));
    const vec = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      vec[i] = next() * 2 - 1;
    }
    return vec;
  }
}

function normalized(vec: Float64Array, fallbackSeed: number): Float64Array {
  let norm = 0;
  for (const x of vec) {
    norm += x * x;
  }
  norm = Math.sqrt(norm);
  if (norm < 1e-9) {
    // degenerate pooling result; fall back to a deterministic basis vector
    const basis = new Float64Array(vec.length);
    basis[fallbackSeed % vec.length] = 1;
    return basis;
  }
  const out = new Float64Array(vec.length);
  for (let i = 0; i < vec.length; i++) {
    out[i] = (vec[i] as number) / norm;
  }
  return out;
}

/** Unit vector for one word, or null when the word has zero subwords. */
export function embedWord(model: EncoderModel, word: string, pooling: Pooling): Float64Array | null {
  const grams = model.subwords(word);
  if (grams.length === 0) {
    return null;
  }
  const used = pooling === "first" ? grams.slice(0, 1) : grams;
  const sum = new Float64Array(model.dim);
  for (const gram of used) {
    const g = model.embedSubword(gram);
    for (let i = 0; i < model.dim; i++) {
      sum[i] = (sum[i] as number) + (g[i] as number);
    }
  }
  for (let i = 0; i < model.dim; i++) {
    sum[i] = (sum[i] as number) / used.length;
  }
  return normalized(sum, fnv1a(word));
}

/** Unit vector for a whole sentence: mean over its word vectors. */
export function embedSentence(
  model: EncoderModel,
  wordVectors: readonly Float64Array[],
): Float64Array {
  const sum = new Float64Array(model.dim);
  for (const vec of wordVectors) {
    for (let i = 0; i < model.dim; i++) {
      sum[i] = (sum[i] as number) + (vec[i] as number);
    }
  }
  for (let i = 0; i < model.dim; i++) {
    sum[i] = (sum[i] as number) / wordVectors.length;
  }
  return normalized(sum, wordVectors.length);
}
