/**
 * Writer (and validating reader, used by the tests) for the UEB1 binary
 * embedding format consumed by the retrieval adaptation engine.
 *
 * Layout, little-endian: magic "UEB1", u32 version (=1), u8 modality
 * (0 text, 1 image), u8 normalized, u8 has_labels, u8 reserved, u32 count,
 * u32 dim, count*dim f32 row-major, then count id records (u16 UTF-8 byte
 * length + bytes), then count i32 labels when has_labels is set.
 */

export type Modality = "text" | "image";

export interface EmbeddingSet {
  modality: Modality;
  dim: number;
  rows: Float32Array[];
  ids: string[];
  labels?: Int32Array;
  normalized: boolean;
}

const MAGIC = Buffer.from("UEB1", "ascii");
const VERSION = 1;
const MODALITY_CODE: Record<Modality, number> = { text: 0, image: 1 };

export function encodeUeb1(set: EmbeddingSet): Buffer {
  const { rows, ids, labels, dim } = set;
  const count = rows.length;
  if (ids.length !== count) {
    throw new Error(`${ids.length} ids for ${count} rows`);
  }
  if (labels && labels.length !== count) {
    throw new Error(`${labels.length} labels for ${count} rows`);
  }
  const idBuffers = ids.map((id) => Buffer.from(id, "utf8"));
  for (const buf of idBuffers) {
    if (buf.length > 0xffff) throw new Error("id exceeds 65535 UTF-8 bytes");
  }
  const idBytes = idBuffers.reduce((total, buf) => total + 2 + buf.length, 0);
  const size = 20 + count * dim * 4 + idBytes + (labels ? count * 4 : 0);
  const out = Buffer.alloc(size);

  let offset = 0;
  MAGIC.copy(out, offset); offset += 4;
  out.writeUInt32LE(VERSION, offset); offset += 4;
  out.writeUInt8(MODALITY_CODE[set.modality], offset); offset += 1;
  out.writeUInt8(set.normalized ? 1 : 0, offset); offset += 1;
  out.writeUInt8(labels ? 1 : 0, offset); offset += 1;
  out.writeUInt8(0, offset); offset += 1;
  out.writeUInt32LE(count, offset); offset += 4;
  out.writeUInt32LE(dim, offset); offset += 4;

  for (const row of rows) {
    if (row.length !== dim) throw new Error(`row of length ${row.length}, expected ${dim}`);
    for (const value of row) {
      out.writeFloatLE(value, offset); offset += 4;
    }
  }
  for (const buf of idBuffers) {
    out.writeUInt16LE(buf.length, offset); offset += 2;
    buf.copy(out, offset); offset += buf.length;
  }
  if (labels) {
    for (const label of labels) {
      out.writeInt32LE(label, offset); offset += 4;
    }
  }
  return out;
}

export function decodeUeb1(buf: Buffer): EmbeddingSet {
  if (!buf.subarray(0, 4).equals(MAGIC)) throw new Error("bad magic");
  if (buf.readUInt32LE(4) !== VERSION) throw new Error("bad version");
  const modality: Modality = buf.readUInt8(8) === 0 ? "text" : "image";
  const normalized = buf.readUInt8(9) === 1;
  const hasLabels = buf.readUInt8(10) === 1;
  const count = buf.readUInt32LE(12);
  const dim = buf.readUInt32LE(16);

  let offset = 20;
  const rows: Float32Array[] = [];
  for (let i = 0; i < count; i++) {
    const row = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      row[j] = buf.readFloatLE(offset); offset += 4;
    }
    rows.push(row);
  }
  const ids: string[] = [];
  for (let i = 0; i < count; i++) {
    const length = buf.readUInt16LE(offset); offset += 2;
    ids.push(buf.subarray(offset, offset + length).toString("utf8")); offset += length;
  }
  let labels: Int32Array | undefined;
  if (hasLabels) {
    labels = new Int32Array(count);
    for (let i = 0; i < count; i++) {
      labels[i] = buf.readInt32LE(offset); offset += 4;
    }
  }
  if (offset !== buf.length) throw new Error("trailing bytes");
  return { modality, dim, rows, ids, labels, normalized };
}

export function l2Normalize(row: Float32Array): Float32Array {
  let sum = 0;
  for (const value of row) sum += value * value;
  const norm = Math.sqrt(sum);
  if (norm === 0) throw new Error("zero vector cannot be normalized");
  const out = new Float32Array(row.length);
  for (let i = 0; i < row.length; i++) out[i] = row[i] / norm;
  return out;
}
