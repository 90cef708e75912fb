export { loadEncoder } from "./encoder.js";
export type { DualEncoder } from "./encoder.js";
export {
  CaptionParseError,
  EncodingFailure,
  MissingImage,
  ModelLoadFailure,
} from "./errors.js";
export { listImages, parseCaptions, runExport } from "./export.js";
export type { Caption, ExportOptions, ExportResult } from "./export.js";
export { decodeUeb1, encodeUeb1, l2Normalize } from "./ueb1.js";
export type { EmbeddingSet, Modality } from "./ueb1.js";
