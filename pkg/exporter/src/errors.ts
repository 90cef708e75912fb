/** Failure classes mirroring the exporter's contract. */

export class ModelLoadFailure extends Error {
  constructor(modelId: string, reason: string) {
    super(`cannot load model "${modelId}": ${reason}`);
    this.name = "ModelLoadFailure";
  }
}

export class MissingImage extends Error {
  constructor(imageId: string, line: number) {
    super(`caption line ${line} references missing image "${imageId}"`);
    this.name = "MissingImage";
  }
}

export class EncodingFailure extends Error {
  constructor(what: string, cause: unknown) {
    super(`failed to encode ${what}: ${cause instanceof Error ? cause.message : String(cause)}`);
    this.name = "EncodingFailure";
  }
}

export class CaptionParseError extends Error {
  constructor(line: number, reason: string) {
    super(`captions file line ${line}: ${reason}`);
    this.name = "CaptionParseError";
  }
}
