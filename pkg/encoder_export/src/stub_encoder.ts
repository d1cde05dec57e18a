/**
 * Deterministic stub encoder for CI and integration tests: a seeded random
 * projection of the hashed input bytes. No model weights, no downloads,
 * identical output on every platform.
 */

import { createHash } from 'node:crypto'
import { SplitMix64 } from './splitmix.js'

export interface Encoder {
  name: string
  dim: number
  /** recorded in the manifest; real encoders report their own pooling */
  pooling: string
  encodeBytes(input: Buffer): Float32Array
}

export function stubEncoder(dim: number): Encoder {
  if (!Number.isInteger(dim) || dim < 1) throw new Error(`bad stub dim ${dim}`)
  return {
    name: `stub-${dim}`,
    dim,
    pooling: 'hash-projection',
    encodeBytes(input: Buffer): Float32Array {
      const digest = createHash('sha256').update(input).digest()
      const rng = new SplitMix64(digest.readBigUInt64LE(0))
      const out = new Float32Array(dim)
      for (let i = 0; i < dim; i++) out[i] = Math.fround(rng.nextSymmetric())
      return out
    },
  }
}

/** Resolve an encoder by name; only `stub-<dim>` ships with the tool. */
export function resolveEncoder(name: string): Encoder {
  const match = /^stub-(\d+)$/.exec(name)
  if (!match) {
    throw new Error(`unknown encoder ${name}; available: stub-<dim> (e.g. stub-768)`)
  }
  return stubEncoder(Number(match[1]))
}
