/**
 * SEB1 embedding files, byte-compatible with the training engine.
 *
 * Layout (little-endian):
 *   magic "SEB1" | version u32=1 | dtype u32=0 (f32) | n_rows u64 |
 *   dim u32 | reserved u32=0 | payload row-major f32 | crc32 u32
 * CRC32 is IEEE, computed over header + payload. A sidecar
 * `<name>.manifest.json` carries provenance.
 */

import { crc32 } from 'node:zlib'
import * as fs from 'node:fs'
import * as path from 'node:path'

export const MAGIC = 'SEB1'
export const HEADER_BYTES = 28

export interface Seb1Matrix {
  nRows: number
  dim: number
  /** row-major, length nRows * dim */
  data: Float32Array
}

export class Seb1FormatError extends Error {}
export class Seb1ChecksumError extends Error {}

export function encodeSeb1(matrix: Seb1Matrix): Buffer {
  const { nRows, dim, data } = matrix
  if (data.length !== nRows * dim) {
    throw new Seb1FormatError(`payload length ${data.length} != ${nRows}x${dim}`)
  }
  for (const v of data) {
    if (!Number.isFinite(v)) throw new Seb1FormatError('refusing to write non-finite values')
  }
  const header = Buffer.alloc(HEADER_BYTES)
  header.write(MAGIC, 0, 'ascii')
  header.writeUInt32LE(1, 4) // version
  header.writeUInt32LE(0, 8) // dtype f32
  header.writeBigUInt64LE(BigInt(nRows), 12)
  header.writeUInt32LE(dim, 20)
  header.writeUInt32LE(0, 24) // reserved
  const payload = Buffer.alloc(data.length * 4)
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], i * 4)
  const footer = Buffer.alloc(4)
  footer.writeUInt32LE(crc32(payload, crc32(header)) >>> 0, 0)
  return Buffer.concat([header, payload, footer])
}

export function writeSeb1(matrix: Seb1Matrix, filePath: string): void {
  const blob = encodeSeb1(matrix)
  const tmp = filePath + '.tmp'
  fs.writeFileSync(tmp, blob)
  fs.renameSync(tmp, filePath)
}

export function readSeb1(filePath: string): Seb1Matrix {
  const raw = fs.readFileSync(filePath)
  if (raw.length < HEADER_BYTES + 4) throw new Seb1FormatError(`${filePath}: truncated header`)
  if (raw.toString('ascii', 0, 4) !== MAGIC) {
    throw new Seb1FormatError(`${filePath}: bad magic`)
  }
  if (raw.readUInt32LE(4) !== 1) throw new Seb1FormatError(`${filePath}: unsupported version`)
  if (raw.readUInt32LE(8) !== 0) throw new Seb1FormatError(`${filePath}: unsupported dtype`)
  const nRows = Number(raw.readBigUInt64LE(12))
  const dim = raw.readUInt32LE(20)
  const payloadBytes = nRows * dim * 4
  if (raw.length < HEADER_BYTES + payloadBytes + 4) {
    throw new Seb1FormatError(`${filePath}: truncated payload`)
  }
  const stored = raw.readUInt32LE(HEADER_BYTES + payloadBytes)
  const actual = crc32(raw.subarray(0, HEADER_BYTES + payloadBytes)) >>> 0
  if (stored !== actual) {
    throw new Seb1ChecksumError(
      `${filePath}: CRC32 mismatch, expected 0x${stored.toString(16)}, actual 0x${actual.toString(16)}`,
    )
  }
  const data = new Float32Array(nRows * dim)
  for (let i = 0; i < data.length; i++) data[i] = raw.readFloatLE(HEADER_BYTES + i * 4)
  return { nRows, dim, data }
}

export function manifestPath(filePath: string): string {
  const dir = path.dirname(filePath)
  const name = path.basename(filePath)
  const stem = name.endsWith('.seb1') ? name.slice(0, -'.seb1'.length) : name
  return path.join(dir, stem + '.manifest.json')
}

export function writeManifest(filePath: string, manifest: Record<string, unknown>): void {
  const sorted = Object.fromEntries(Object.entries(manifest).sort(([a], [b]) => (a < b ? -1 : 1)))
  fs.writeFileSync(manifestPath(filePath), JSON.stringify(sorted, null, 2) + '\n')
}
