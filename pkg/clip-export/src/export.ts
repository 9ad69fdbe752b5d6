// Export jobs: turn an image folder tree (domain/class/image) into one
// embedding container per domain, plus a class text-embedding container for
// zero-shot scoring, all in the format the gradsep package reads directly.

import { readFileSync } from 'node:fs'
import { basename, join } from 'node:path'

import { Embedder, UndecodableImageError } from './backbone.js'
import { EmbeddingRecord, writeEmbeddings } from './container.js'
import { scanDataset } from './dataset.js'
import { writeManifest } from './manifest.js'

export interface ExportJob {
  root: string
  outDir: string
  embedder: Embedder
  domains?: string[]
  promptTemplate?: string
  knownClasses?: number
  warn?: (message: string) => void
}

export interface ExportReport {
  classNames: string[]
  counts: Map<string, number>
  skipped: number
}

const DEFAULT_TEMPLATE = 'a photo of a {class}'

function resolveKnownClasses(job: ExportJob, numClasses: number): number {
  const known = job.knownClasses ?? Math.min(25, numClasses)
  if (known < 1 || known > numClasses) {
    throw new Error(
      `known-class count ${known} out of range for ${numClasses} classes`
    )
  }
  return known
}

export async function exportImages(job: ExportJob): Promise<ExportReport> {
  const warn = job.warn ?? ((m) => console.warn(m))
  const scan = scanDataset(job.root, job.domains)
  writeManifest(join(job.outDir, 'manifest.txt'), {
    featureDim: job.embedder.dim,
    knownClasses: resolveKnownClasses(job, scan.classNames.length),
    classNames: scan.classNames,
  })

  const counts = new Map<string, number>()
  let skipped = 0
  for (const [domain, images] of scan.byDomain) {
    const records: EmbeddingRecord[] = []
    for (const image of images) {
      let feature: Float32Array
      try {
        feature = await job.embedder.embedImage(readFileSync(image.path))
      } catch (err) {
        if (err instanceof UndecodableImageError) {
          warn(`skipping undecodable image ${image.path}: ${err.message}`)
          skipped++
          continue
        }
        throw err
      }
      records.push({
        id: `${domain}/${image.className}/${basename(image.path)}`,
        label: image.classIndex,
        domain,
        feature,
      })
    }
    writeEmbeddings(join(job.outDir, `${domain}.osde`), records,
                    job.embedder.dim)
    counts.set(domain, records.length)
  }
  return { classNames: scan.classNames, counts, skipped }
}

export async function exportText(job: ExportJob): Promise<ExportReport> {
  const template = job.promptTemplate ?? DEFAULT_TEMPLATE
  const scan = scanDataset(job.root, job.domains)
  const records: EmbeddingRecord[] = []
  for (const [label, name] of scan.classNames.entries()) {
    // folder names use underscores; prompts read better with spaces
    const prompt = template.replace('{class}', name.replace(/_/g, ' '))
    records.push({
      id: name,
      label,
      domain: 'text',
      feature: await job.embedder.embedText(prompt),
    })
  }
  writeEmbeddings(join(job.outDir, 'text.osde'), records, job.embedder.dim)
  return {
    classNames: scan.classNames,
    counts: new Map([['text', records.length]]),
    skipped: 0,
  }
}
