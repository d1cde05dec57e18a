/** SplitMix64: portable 64-bit PRNG, exactly reproducible everywhere. */

const MASK = (1n << 64n) - 1n
const GOLDEN = 0x9e3779b97f4a7c15n

export class SplitMix64 {
  private state: bigint

  constructor(seed: bigint) {
    this.state = seed & MASK
  }

  nextU64(): bigint {
    this.state = (this.state + GOLDEN) & MASK
    let z = this.state
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK
    return z ^ (z >> 31n)
  }

  /** Uniform float in [-1, 1) from the top 53 bits. */
  nextSymmetric(): number {
    const unit = Number(this.nextU64() >> 11n) / 2 ** 53
    return 2 * unit - 1
  }
}
