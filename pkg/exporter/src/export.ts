/**
 * The export pipeline: read an image directory and a caption file, encode
 * both sides with a dual encoder, and emit UEB1 files plus a manifest.
 *
 * Inputs are never reordered: images are taken in sorted filename order,
 * captions in file line order. Image row ids are filenames; caption row
 * ids are 0-based caption line indices. Both sides carry identity labels
 * (image row index, and for each caption the index of its referenced
 * image) so the downstream engine can evaluate retrieval on the export.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { DualEncoder, loadEncoder } from "./encoder.js";
import { CaptionParseError, MissingImage } from "./errors.js";
import { EmbeddingSet, encodeUeb1 } from "./ueb1.js";

export interface Caption {
  imageId: string;
  text: string;
  line: number;
}

export interface ExportOptions {
  imagesDir: string;
  captionsFile: string;
  modelId: string;
  outDir: string;
  deterministic?: boolean;
}

export interface ExportResult {
  textPath: string;
  imagePath: string;
  manifestPath: string;
  nImages: number;
  nCaptions: number;
  dim: number;
}

export function parseCaptions(raw: string): Caption[] {
  const captions: Caption[] = [];
  const lines = raw.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i];
    if (line.trim() === "") continue;
    const tab = line.indexOf("\t");
    if (tab <= 0) {
      throw new CaptionParseError(i + 1, 'expected "image_id<TAB>caption"');
    }
    captions.push({ imageId: line.slice(0, tab), text: line.slice(tab + 1), line: i + 1 });
  }
  return captions;
}

export function listImages(imagesDir: string): string[] {
  return fs
    .readdirSync(imagesDir)
    .filter((name) => name.toLowerCase().endsWith(".png"))
    .sort();
}

export function runExport(options: ExportOptions): ExportResult {
  const encoder: DualEncoder = loadEncoder(options.modelId);
  const filenames = listImages(options.imagesDir);
  if (filenames.length === 0) {
    throw new Error(`no .png images found in ${options.imagesDir}`);
  }
  const captions = parseCaptions(fs.readFileSync(options.captionsFile, "utf8"));
  if (captions.length === 0) {
    throw new Error(`no captions found in ${options.captionsFile}`);
  }
  const imageIndex = new Map(filenames.map((name, i) => [name, i]));
  for (const caption of captions) {
    if (!imageIndex.has(caption.imageId)) {
      throw new MissingImage(caption.imageId, caption.line);
    }
  }

  const imageRows = filenames.map((name) =>
    encoder.encodeImage(fs.readFileSync(path.join(options.imagesDir, name)), name)
  );
  const textRows = captions.map((caption) => encoder.encodeText(caption.text));

  const imageSet: EmbeddingSet = {
    modality: "image",
    dim: encoder.dim,
    rows: imageRows,
    ids: filenames,
    labels: Int32Array.from(filenames.map((_, i) => i)),
    normalized: true,
  };
  const textSet: EmbeddingSet = {
    modality: "text",
    dim: encoder.dim,
    rows: textRows,
    ids: captions.map((_, i) => String(i)),
    labels: Int32Array.from(captions.map((c) => imageIndex.get(c.imageId)!)),
    normalized: true,
  };

  fs.mkdirSync(options.outDir, { recursive: true });
  const textPath = path.join(options.outDir, "text.ueb1");
  const imagePath = path.join(options.outDir, "image.ueb1");
  const manifestPath = path.join(options.outDir, "manifest.json");
  fs.writeFileSync(textPath, encodeUeb1(textSet));
  fs.writeFileSync(imagePath, encodeUeb1(imageSet));
  const manifest = {
    model: options.modelId,
    dim: encoder.dim,
    n_images: filenames.length,
    n_captions: captions.length,
    deterministic: options.deterministic ?? false,
  };
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");

  return {
    textPath,
    imagePath,
    manifestPath,
    nImages: filenames.length,
    nCaptions: captions.length,
    dim: encoder.dim,
  };
}
