// Embedding backbones. The real one wraps a pretrained CLIP checkpoint via
// transformers.js (requires network access / cached weights). The hash
// backbone is a deterministic stand-in used by the tests and for offline
// plumbing checks: it never produces meaningful similarities, only stable,
// well-formed vectors.

import { createHash } from 'node:crypto'

export interface Embedder {
  name: string
  dim: number
  embedImage(data: Buffer): Promise<Float32Array>
  embedText(text: string): Promise<Float32Array>
}

export class UndecodableImageError extends Error {}

const IMAGE_SIGNATURES: Array<[string, number[]]> = [
  ['png', [0x89, 0x50, 0x4e, 0x47]],
  ['jpeg', [0xff, 0xd8, 0xff]],
  ['gif', [0x47, 0x49, 0x46, 0x38]],
  ['bmp', [0x42, 0x4d]],
]

function checkImageSignature(data: Buffer): void {
  for (const [, sig] of IMAGE_SIGNATURES) {
    if (sig.every((b, i) => data[i] === b)) return
  }
  throw new UndecodableImageError('unrecognized image format')
}

function l2Normalize(v: Float32Array): Float32Array {
  let sum = 0
  for (const x of v) sum += x * x
  const norm = Math.sqrt(sum) || 1
  return v.map((x) => x / norm)
}

/** Expand a SHA-256 stream into `dim` floats in [-1, 1), then normalize. */
function hashToVector(seed: string, data: Buffer, dim: number): Float32Array {
  const out = new Float32Array(dim)
  let counter = 0
  let filled = 0
  while (filled < dim) {
    const digest = createHash('sha256')
      .update(seed)
      .update(data)
      .update(String(counter++))
      .digest()
    for (let i = 0; i + 4 <= digest.length && filled < dim; i += 4) {
      out[filled++] = digest.readUInt32LE(i) / 2 ** 31 - 1
    }
  }
  return l2Normalize(out)
}

export function hashEmbedder(dim = 64): Embedder {
  return {
    name: `hash-${dim}`,
    dim,
    async embedImage(data: Buffer) {
      checkImageSignature(data)
      return hashToVector('image', data, dim)
    },
    async embedText(text: string) {
      return hashToVector('text', Buffer.from(text, 'utf-8'), dim)
    },
  }
}

/**
 * Pretrained CLIP backbone via transformers.js. Loaded lazily so the
 * dependency (and its weight download) is only needed when actually used.
 */
export async function clipEmbedder(
  model = 'Xenova/clip-vit-base-patch32'
): Promise<Embedder> {
  let transformers: any
  try {
    transformers = await import('@xenova/transformers' as string)
  } catch {
    throw new Error(
      'the CLIP backbone needs the optional "@xenova/transformers" ' +
        'package (npm install @xenova/transformers) and access to the ' +
        `"${model}" weights; use the hash backbone for offline plumbing`
    )
  }
  const { AutoTokenizer, AutoProcessor, CLIPTextModelWithProjection,
          CLIPVisionModelWithProjection, RawImage } = transformers
  const tokenizer = await AutoTokenizer.from_pretrained(model)
  const processor = await AutoProcessor.from_pretrained(model)
  const textModel = await CLIPTextModelWithProjection.from_pretrained(model)
  const visionModel =
    await CLIPVisionModelWithProjection.from_pretrained(model)

  const probe = await textModel(tokenizer('probe'))
  const dim = probe.text_embeds.dims.at(-1)

  return {
    name: model,
    dim,
    async embedImage(data: Buffer) {
      let image
      try {
        image = await RawImage.fromBlob(new Blob([new Uint8Array(data)]))
      } catch (err) {
        throw new UndecodableImageError(String(err))
      }
      const inputs = await processor(image)
      const { image_embeds } = await visionModel(inputs)
      return l2Normalize(Float32Array.from(image_embeds.data))
    },
    async embedText(text: string) {
      const { text_embeds } = await textModel(tokenizer(text))
      return l2Normalize(Float32Array.from(text_embeds.data))
    },
  }
}
