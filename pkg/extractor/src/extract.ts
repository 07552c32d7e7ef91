/** Batch embedding extraction: corpus in, EMB1 file out.
 *
 * Token-level extraction emits one record per word, keyed by
 * (sentence id, word index); sentence-level extraction pools the word
 * vectors into one record per sentence with the no-token sentinel. Either
 * way every word must embed: a word whose characters are all filtered out
 * by the encoder has no subwords, and silently skipping it would desync
 * token indexes from the consumer's view of the sentence, so that raises
 * instead of shifting.
 */

import { readCorpus, type SentenceRec } from "./corpus.js";
import { embedSentence, embedWord, loadModel, type Pooling } from "./encoder.js";
import { NO_TOKEN, SENTENCE_LEVEL, TOKEN_LEVEL, writeEmb1, type VectorRecord } from "./emb1.js";
import { TokenAlignmentFailure } from "./errors.js";

export type Level = "sentence" | "token";

export interface ExtractionJob {
  readonly corpus: string;
  readonly model: string;
  readonly level: Level;
  readonly out: string;
  readonly pooling: Pooling;
  readonly dim: number;
  readonly batchSize: number;
}

export interface ExtractionReport {
  readonly sentences: number;
  readonly records: number;
  readonly dim: number;
  readonly level: number;
}

function wordVectors(
  model: ReturnType<typeof loadModel>,
  sentence: SentenceRec,
  pooling: Pooling,
): Float64Array[] {
  const vectors: Float64Array[] = [];
  sentence.tokens.forEach((word, index) => {
    const vec = embedWord(model, word, pooling);
    if (vec === null) {
      throw new TokenAlignmentFailure(
        `sentence ${sentence.id}, word ${index}: ${JSON.stringify(word)} has no encodable characters`,
        sentence.id,
        index,
      );
    }
    vectors.push(vec);
  });
  return vectors;
}

export function extract(job: ExtractionJob): ExtractionReport {
  const model = loadModel(job.model, job.dim);
  const sentences = readCorpus(job.corpus);
  const levelCode = job.level === "sentence" ? SENTENCE_LEVEL : TOKEN_LEVEL;

  const records: VectorRecord[] = [];
  for (let start = 0; start < sentences.length; start += job.batchSize) {
    for (const sentence of sentences.slice(start, start + job.batchSize)) {
      const vectors = wordVectors(model, sentence, job.pooling);
      if (job.level === "token") {
        vectors.forEach((values, tokenIndex) => {
          records.push({ sentenceId: sentence.id, tokenIndex, values });
        });
      } else {
        records.push({
          sentenceId: sentence.id,
          tokenIndex: NO_TOKEN,
          values: embedSentence(model, vectors),
        });
      }
    }
  }

  writeEmb1(job.out, job.dim, levelCode, records);
  return { sentences: sentences.length, records: records.length, dim: job.dim, level: levelCode };
}
