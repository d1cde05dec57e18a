/**
 * Export jobs: run an encoder over a caption TSV or an image path list and
 * write one SEB1 embedding row per input, order-preserving.
 *
 * Inputs: text corpora are UTF-8 TSV lines `id\ttext`; image corpora are
 * newline-separated file paths (the path doubles as the row id).
 * Unreadable inputs are skipped and logged with their id; everything that
 * was exported is audited through the manifest `ids` array.
 */

import * as fs from 'node:fs'
import { performance } from 'node:perf_hooks'
import { resolveEncoder } from './stub_encoder.js'
import { truncateTokens } from './tokenize.js'
import { writeManifest, writeSeb1 } from './seb1.js'

export const DEFAULT_MAX_TEXT_TOKENS = 1024
export const DEFAULT_BATCH_SIZE = 256

export interface ExportJob {
  encoderName: string
  modality: 'image' | 'text'
  inputPath: string
  outputPath: string
  batchSize?: number
  maxTextTokens?: number
  sourceDataset?: string
}

export interface ExportResult {
  outputPath: string
  nRows: number
  dim: number
  ids: string[]
  skipped: string[]
  samplesPerSec: number
}

interface Item {
  id: string
  load(): Buffer
}

function textItems(inputPath: string, maxTokens: number): Item[] {
  const lines = fs.readFileSync(inputPath, 'utf-8').split('\n')
  const items: Item[] = []
  for (const [index, line] of lines.entries()) {
    if (line.trim().length === 0) continue
    const tab = line.indexOf('\t')
    if (tab < 0) {
      throw new Error(`${inputPath}:${index + 1}: expected id\\ttext`)
    }
    const id = line.slice(0, tab)
    const text = truncateTokens(line.slice(tab + 1), maxTokens)
    items.push({ id, load: () => Buffer.from(text, 'utf-8') })
  }
  return items
}

function imageItems(inputPath: string): Item[] {
  return fs
    .readFileSync(inputPath, 'utf-8')
    .split('\n')
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
    .map((p) => ({ id: p, load: () => fs.readFileSync(p) }))
}

export function runExport(job: ExportJob): ExportResult {
  const encoder = resolveEncoder(job.encoderName)
  const batchSize = job.batchSize ?? DEFAULT_BATCH_SIZE
  const maxTokens = job.maxTextTokens ?? DEFAULT_MAX_TEXT_TOKENS
  const items =
    job.modality === 'text' ? textItems(job.inputPath, maxTokens) : imageItems(job.inputPath)

  const rows: Float32Array[] = []
  const ids: string[] = []
  const skipped: string[] = []
  const started = performance.now()
  for (let offset = 0; offset < items.length; offset += batchSize) {
    for (const item of items.slice(offset, offset + batchSize)) {
      let bytes: Buffer
      try {
        bytes = item.load()
      } catch (err) {
        console.error(`skipping ${item.id}: ${(err as Error).message}`)
        skipped.push(item.id)
        continue
      }
      const row = encoder.encodeBytes(bytes)
      if (row.length !== encoder.dim) {
        throw new Error(`encoder ${encoder.name} emitted dim ${row.length}, declared ${encoder.dim}`)
      }
      rows.push(row)
      ids.push(item.id)
    }
  }
  const elapsedSec = Math.max((performance.now() - started) / 1000, 1e-9)

  const data = new Float32Array(rows.length * encoder.dim)
  rows.forEach((row, i) => data.set(row, i * encoder.dim))
  writeSeb1({ nRows: rows.length, dim: encoder.dim, data }, job.outputPath)

  const samplesPerSec = rows.length / elapsedSec
  writeManifest(job.outputPath, {
    encoder_name: encoder.name,
    source_dataset: job.sourceDataset ?? job.inputPath,
    n_rows: rows.length,
    dim: encoder.dim,
    created_unix_ms: Date.now(),
    ids,
    skipped,
    modality: job.modality,
    pooling: encoder.pooling,
    max_text_tokens: job.modality === 'text' ? maxTokens : null,
    throughput_samples_per_sec: samplesPerSec,
  })
  return {
    outputPath: job.outputPath,
    nRows: rows.length,
    dim: encoder.dim,
    ids,
    skipped,
    samplesPerSec,
  }
}
