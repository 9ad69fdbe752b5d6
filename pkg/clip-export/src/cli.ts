#!/usr/bin/env node
// Command line front end: `clip-export images|text|all --root DIR --out DIR`.

import { mkdirSync } from 'node:fs'
import { parseArgs } from 'node:util'

import { clipEmbedder, hashEmbedder, Embedder } from './backbone.js'
import { exportImages, exportText, ExportJob } from './export.js'

const USAGE = `usage: clip-export <images|text|all> --root DIR --out DIR
                   [--domains a,b,...] [--backbone clip|hash]
                   [--model NAME] [--template "a photo of a {class}"]
                   [--known-classes N] [--dim N]

Embeds an image folder tree laid out as root/domain/class/image and writes
one embedding container per domain (plus manifest.txt / text.osde) in the
format the gradsep experiment runner consumes.`

async function buildEmbedder(values: {
  backbone?: string
  model?: string
  dim?: string
}): Promise<Embedder> {
  const backbone = values.backbone ?? 'clip'
  if (backbone === 'hash') {
    return hashEmbedder(values.dim ? parseInt(values.dim, 10) : 64)
  }
  if (backbone === 'clip') {
    return values.model ? clipEmbedder(values.model) : clipEmbedder()
  }
  throw new Error(`unknown backbone "${backbone}" (expected clip or hash)`)
}

export async function main(argv: string[]): Promise<number> {
  const { values, positionals } = parseArgs({
    args: argv,
    allowPositionals: true,
    options: {
      root: { type: 'string' },
      out: { type: 'string' },
      domains: { type: 'string' },
      backbone: { type: 'string' },
      model: { type: 'string' },
      template: { type: 'string' },
      'known-classes': { type: 'string' },
      dim: { type: 'string' },
      help: { type: 'boolean' },
    },
  })
  if (values.help || positionals.length !== 1) {
    console.log(USAGE)
    return values.help ? 0 : 2
  }
  const command = positionals[0]
  if (!['images', 'text', 'all'].includes(command)) {
    console.error(`unknown command "${command}"\n${USAGE}`)
    return 2
  }
  if (!values.root || !values.out) {
    console.error(`--root and --out are required\n${USAGE}`)
    return 2
  }

  mkdirSync(values.out, { recursive: true })
  const job: ExportJob = {
    root: values.root,
    outDir: values.out,
    embedder: await buildEmbedder(values),
    domains: values.domains?.split(',').map((d) => d.trim()),
    promptTemplate: values.template,
    knownClasses: values['known-classes']
      ? parseInt(values['known-classes'], 10)
      : undefined,
  }

  if (command === 'images' || command === 'all') {
    const report = await exportImages(job)
    for (const [domain, count] of report.counts) {
      console.log(`${domain}: ${count} records`)
    }
    if (report.skipped > 0) {
      console.log(`skipped ${report.skipped} undecodable image(s)`)
    }
  }
  if (command === 'text' || command === 'all') {
    const report = await exportText(job)
    console.log(`text: ${report.counts.get('text')} class embeddings`)
  }
  return 0
}

const invokedDirectly =
  process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!)
if (invokedDirectly) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(String(err))
      process.exit(1)
    }
  )
}
