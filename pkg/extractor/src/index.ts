export { readCorpus, type SentenceRec } from "./corpus.js";
export {
  MAGIC,
  NO_TOKEN,
  SENTENCE_LEVEL,
  TOKEN_LEVEL,
  readEmb1,
  writeEmb1,
  type Emb1File,
  type VectorRecord,
} from "./emb1.js";
export {
  HASH_MODEL_ID,
  POOLINGS,
  embedSentence,
  embedWord,
  loadModel,
  type EncoderModel,
  type Pooling,
} from "./encoder.js";
export {
  CorpusFormatFailure,
  ExtractError,
  ModelLoadFailure,
  TokenAlignmentFailure,
} from "./errors.js";
export { extract, type ExtractionJob, type ExtractionReport, type Level } from "./extract.js";
