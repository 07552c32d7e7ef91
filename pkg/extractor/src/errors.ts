/** Error taxonomy, mirrored onto CLI exit codes: usage 1, model 2, data 3. */

export class ExtractError extends Error {}

/** The requested model identifier cannot be loaded. */
export class ModelLoadFailure extends ExtractError {}

/** A corpus file does not parse. */
export class CorpusFormatFailure extends ExtractError {}

/** A word produced zero subwords, so no vector can be aligned to it. */
export class TokenAlignmentFailure extends ExtractError {
  constructor(
    message: string,
    readonly sentenceId: number,
    readonly wordIndex: number,
  ) {
    super(message);
  }
}
