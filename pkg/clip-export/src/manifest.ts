// Plain-text key=value sidecar manifest, matching the format read by the
// gradsep package: class names in label-index order plus the protocol's
// known-class count.

import { readFileSync, writeFileSync } from 'node:fs'

export interface Manifest {
  featureDim: number
  knownClasses: number
  classNames: string[]
}

export function writeManifest(path: string, manifest: Manifest): void {
  const lines = [
    `feature_dim=${manifest.featureDim}`,
    `num_classes=${manifest.classNames.length}`,
    `known_classes=${manifest.knownClasses}`,
  ]
  manifest.classNames.forEach((name, i) => lines.push(`class_${i}=${name}`))
  writeFileSync(path, lines.join('\n') + '\n')
}

export function readManifest(path: string): Manifest {
  const values: Record<string, string> = {}
  for (const raw of readFileSync(path, 'utf-8').split('\n')) {
    const line = raw.trim()
    if (!line || line.startsWith('#')) continue
    const eq = line.indexOf('=')
    values[line.slice(0, eq).trim()] = line.slice(eq + 1).trim()
  }
  const numClasses = parseInt(values['num_classes'], 10)
  const classNames: string[] = []
  for (let i = 0; i < numClasses; i++) {
    classNames.push(values[`class_${i}`])
  }
  return {
    featureDim: parseInt(values['feature_dim'], 10),
    knownClasses: parseInt(values['known_classes'], 10),
    classNames,
  }
}
