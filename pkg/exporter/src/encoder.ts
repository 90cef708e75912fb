/**
 * Dual encoders: paired image and text encoders emitting vectors in one
 * shared space.
 *
 * Real deployments plug in a pretrained vision-language checkpoint. This
 * package ships the "tiny-dual-<dim>" reference family for offline use and
 * pipeline testing: the model id deterministically derives a projection
 * checkpoint (seeded from the id string), images are reduced to an 8x8 RGB
 * grid, texts to hashed character trigrams, and both are projected to the
 * shared dimension and L2-normalized. Same id, same inputs, same vectors,
 * on any machine.
 */

import { PNG } from "pngjs";

import { EncodingFailure, ModelLoadFailure } from "./errors.js";
import { l2Normalize } from "./ueb1.js";

export interface DualEncoder {
  modelId: string;
  dim: number;
  encodeImage(png: Buffer, name: string): Float32Array;
  encodeText(caption: string): Float32Array;
}

const GRID = 8;
const IMAGE_FEATURES = GRID * GRID * 3;
const TEXT_BUCKETS = 256;

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** mulberry32: small deterministic PRNG for checkpoint derivation. */
function rngFrom(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function projectionMatrix(seedTag: string, outDim: number, inDim: number): Float32Array {
  const rand = rngFrom(fnv1a(seedTag));
  const matrix = new Float32Array(outDim * inDim);
  const scale = 1.0 / Math.sqrt(inDim);
  for (let i = 0; i < matrix.length; i++) {
    // sum of three uniforms, centered: cheap near-Gaussian entries
    matrix[i] = (rand() + rand() + rand() - 1.5) * 2.0 * scale;
  }
  return matrix;
}

function project(matrix: Float32Array, features: Float32Array, outDim: number): Float32Array {
  const inDim = features.length;
  const out = new Float32Array(outDim);
  for (let i = 0; i < outDim; i++) {
    let sum = 0;
    const base = i * inDim;
    for (let j = 0; j < inDim; j++) sum += matrix[base + j] * features[j];
    out[i] = sum;
  }
  return out;
}

/** Average-pool a decoded PNG to a GRID x GRID RGB feature vector in [-1, 1]. */
function imageGridFeatures(png: PNG): Float32Array {
  const features = new Float32Array(IMAGE_FEATURES);
  const counts = new Float32Array(GRID * GRID);
  for (let y = 0; y < png.height; y++) {
    const cellY = Math.min(GRID - 1, Math.floor((y * GRID) / png.height));
    for (let x = 0; x < png.width; x++) {
      const cellX = Math.min(GRID - 1, Math.floor((x * GRID) / png.width));
      const cell = cellY * GRID + cellX;
      const pixel = (png.width * y + x) << 2;
      features[cell * 3] += png.data[pixel] / 255;
      features[cell * 3 + 1] += png.data[pixel + 1] / 255;
      features[cell * 3 + 2] += png.data[pixel + 2] / 255;
      counts[cell] += 1;
    }
  }
  for (let cell = 0; cell < GRID * GRID; cell++) {
    const n = counts[cell] || 1;
    for (let channel = 0; channel < 3; channel++) {
      features[cell * 3 + channel] = (features[cell * 3 + channel] / n) * 2 - 1;
    }
  }
  return features;
}

function textTrigramFeatures(caption: string): Float32Array {
  const features = new Float32Array(TEXT_BUCKETS);
  const text = `^^${caption.toLowerCase().trim()}$$`;
  for (let i = 0; i + 3 <= text.length; i++) {
    features[fnv1a(text.slice(i, i + 3)) % TEXT_BUCKETS] += 1;
  }
  return features;
}

class TinyDualEncoder implements DualEncoder {
  readonly modelId: string;
  readonly dim: number;
  private readonly imageProjection: Float32Array;
  private readonly textProjection: Float32Array;

  constructor(modelId: string, dim: number) {
    this.modelId = modelId;
    this.dim = dim;
    this.imageProjection = projectionMatrix(`${modelId}/image`, dim, IMAGE_FEATURES);
    this.textProjection = projectionMatrix(`${modelId}/text`, dim, TEXT_BUCKETS);
  }

  encodeImage(data: Buffer, name: string): Float32Array {
    let png: PNG;
    try {
      png = PNG.sync.read(data);
    } catch (cause) {
      throw new EncodingFailure(`image "${name}"`, cause);
    }
    return l2Normalize(project(this.imageProjection, imageGridFeatures(png), this.dim));
  }

  encodeText(caption: string): Float32Array {
    return l2Normalize(project(this.textProjection, textTrigramFeatures(caption), this.dim));
  }
}

const TINY_PATTERN = /^tiny-dual-(\d+)$/;

export function loadEncoder(modelId: string): DualEncoder {
  const match = TINY_PATTERN.exec(modelId);
  if (!match) {
    throw new ModelLoadFailure(
      modelId,
      'unknown model id; available: "tiny-dual-<dim>" with dim in [8, 512]'
    );
  }
  const dim = Number(match[1]);
  if (!Number.isInteger(dim) || dim < 8 || dim > 512) {
    throw new ModelLoadFailure(modelId, `dim ${match[1]} outside [8, 512]`);
  }
  return new TinyDualEncoder(modelId, dim);
}
