export * from './backbone.js'
export * from './container.js'
export * from './dataset.js'
export * from './export.js'
export * from './manifest.js'
