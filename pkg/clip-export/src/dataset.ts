// Scan an image folder tree laid out as root/domain/class/image and map
// class names to label indices (case-insensitive alphabetical order, the
// same ordering the downstream open-set protocol uses).

import { readdirSync, statSync } from 'node:fs'
import { join } from 'node:path'

export interface DatasetImage {
  path: string
  classIndex: number
  className: string
}

export interface DatasetScan {
  classNames: string[]
  byDomain: Map<string, DatasetImage[]>
}

function subdirs(dir: string): string[] {
  return readdirSync(dir)
    .filter((name) => statSync(join(dir, name)).isDirectory())
    .sort()
}

export function scanDataset(root: string, domains?: string[]): DatasetScan {
  const domainNames = domains ?? subdirs(root)
  if (domainNames.length === 0) {
    throw new Error(`${root}: no domain directories found`)
  }

  // every domain must expose the identical class set
  let classNames: string[] | null = null
  for (const domain of domainNames) {
    const classes = subdirs(join(root, domain)).sort((a, b) =>
      a.toLowerCase() < b.toLowerCase() ? -1 : a.toLowerCase() > b.toLowerCase() ? 1 : 0
    )
    if (classNames === null) {
      classNames = classes
    } else if (
      classes.length !== classNames.length ||
      classes.some((c, i) => c !== classNames![i])
    ) {
      throw new Error(
        `domain "${domain}" has a different class set than ` +
          `"${domainNames[0]}"`
      )
    }
  }

  const byDomain = new Map<string, DatasetImage[]>()
  for (const domain of domainNames) {
    const images: DatasetImage[] = []
    classNames!.forEach((className, classIndex) => {
      const classDir = join(root, domain, className)
      for (const file of readdirSync(classDir).sort()) {
        const path = join(classDir, file)
        if (statSync(path).isFile()) {
          images.push({ path, classIndex, className })
        }
      }
    })
    byDomain.set(domain, images)
  }
  return { classNames: classNames!, byDomain }
}
