// Binary embedding container ("OSDE"), byte-compatible with the Python
// reader/writer in the gradsep package. Layout (little-endian):
//   magic "OSDE" (4 bytes), format version u32 = 1, feature_dim u32,
//   num_records u64; then per record: id (u32 length + UTF-8 bytes),
//   label i32, domain tag (u32 length + UTF-8 bytes), feature_dim x f32.

import { readFileSync, writeFileSync } from 'node:fs'

export const MAGIC = 'OSDE'
export const FORMAT_VERSION = 1

export interface EmbeddingRecord {
  id: string
  label: number
  domain: string
  feature: Float32Array
}

export class EmbeddingFormatError extends Error {}

function lengthPrefixed(text: string): Buffer {
  const bytes = Buffer.from(text, 'utf-8')
  const out = Buffer.alloc(4 + bytes.length)
  out.writeUInt32LE(bytes.length, 0)
  bytes.copy(out, 4)
  return out
}

export function encodeEmbeddings(
  records: EmbeddingRecord[],
  featureDim: number
): Buffer {
  const header = Buffer.alloc(4 + 4 + 4 + 8)
  header.write(MAGIC, 0, 'ascii')
  header.writeUInt32LE(FORMAT_VERSION, 4)
  header.writeUInt32LE(featureDim, 8)
  header.writeBigUInt64LE(BigInt(records.length), 12)

  const parts: Buffer[] = [header]
  for (const rec of records) {
    if (rec.feature.length !== featureDim) {
      throw new EmbeddingFormatError(
        `record "${rec.id}" has ${rec.feature.length} features, ` +
          `expected ${featureDim}`
      )
    }
    parts.push(lengthPrefixed(rec.id))
    const label = Buffer.alloc(4)
    label.writeInt32LE(rec.label, 0)
    parts.push(label)
    parts.push(lengthPrefixed(rec.domain))
    const feats = Buffer.alloc(4 * featureDim)
    for (let i = 0; i < featureDim; i++) {
      feats.writeFloatLE(rec.feature[i], 4 * i)
    }
    parts.push(feats)
  }
  return Buffer.concat(parts)
}

export function writeEmbeddings(
  path: string,
  records: EmbeddingRecord[],
  featureDim: number
): void {
  writeFileSync(path, encodeEmbeddings(records, featureDim))
}

class Cursor {
  offset = 0
  constructor(
    private buf: Buffer,
    private path: string
  ) {}

  take(count: number): Buffer {
    if (this.offset + count > this.buf.length) {
      throw new EmbeddingFormatError(`${this.path}: unexpected end of file`)
    }
    const out = this.buf.subarray(this.offset, this.offset + count)
    this.offset += count
    return out
  }

  u32(): number {
    return this.take(4).readUInt32LE(0)
  }

  i32(): number {
    return this.take(4).readInt32LE(0)
  }

  string(): string {
    return this.take(this.u32()).toString('utf-8')
  }

  remaining(): number {
    return this.buf.length - this.offset
  }
}

export function readEmbeddings(path: string): {
  featureDim: number
  records: EmbeddingRecord[]
} {
  const cursor = new Cursor(readFileSync(path), path)
  const magic = cursor.take(4).toString('ascii')
  if (magic !== MAGIC) {
    throw new EmbeddingFormatError(
      `${path}: bad magic bytes "${magic}", expected "${MAGIC}"`
    )
  }
  const version = cursor.u32()
  if (version !== FORMAT_VERSION) {
    throw new EmbeddingFormatError(
      `${path}: format version ${version}, expected ${FORMAT_VERSION}`
    )
  }
  const featureDim = cursor.u32()
  const numRecords = cursor.take(8).readBigUInt64LE(0)

  const records: EmbeddingRecord[] = []
  for (let i = 0n; i < numRecords; i++) {
    const id = cursor.string()
    const label = cursor.i32()
    const domain = cursor.string()
    const raw = cursor.take(4 * featureDim)
    const feature = new Float32Array(featureDim)
    for (let j = 0; j < featureDim; j++) {
      feature[j] = raw.readFloatLE(4 * j)
    }
    records.push({ id, label, domain, feature })
  }
  if (cursor.remaining() !== 0) {
    throw new EmbeddingFormatError(
      `${path}: ${cursor.remaining()} trailing bytes after last record`
    )
  }
  return { featureDim, records }
}
