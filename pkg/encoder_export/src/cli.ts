#!/usr/bin/env node
/**
 * encoder-export --modality text --input captions.tsv --encoder stub-768 --out embeds.seb1
 *
 * Caption input: UTF-8 TSV `id\ttext`. Image input: newline list of paths.
 * Output: SEB1 + `<name>.manifest.json`, readable by the training engine.
 */

import { parseArgs } from 'node:util'
import { pathToFileURL } from 'node:url'
import { runExport } from './export.js'

export function main(argv: string[]): number {
  let args
  try {
    args = parseArgs({
      args: argv,
      options: {
        modality: { type: 'string' },
        input: { type: 'string' },
        encoder: { type: 'string' },
        out: { type: 'string' },
        'batch-size': { type: 'string' },
        'max-tokens': { type: 'string' },
        'source-dataset': { type: 'string' },
      },
    }).values
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
  const { modality, input, encoder, out } = args
  if (!modality || !input || !encoder || !out) {
    console.error('error: --modality, --input, --encoder and --out are required')
    return 1
  }
  if (modality !== 'image' && modality !== 'text') {
    console.error(`error: --modality must be image or text, got ${modality}`)
    return 1
  }
  try {
    const result = runExport({
      encoderName: encoder,
      modality,
      inputPath: input,
      outputPath: out,
      batchSize: args['batch-size'] ? Number(args['batch-size']) : undefined,
      maxTextTokens: args['max-tokens'] ? Number(args['max-tokens']) : undefined,
      sourceDataset: args['source-dataset'],
    })
    console.log(
      `exported ${result.nRows} rows (dim ${result.dim}) to ${result.outputPath} ` +
        `at ${result.samplesPerSec.toFixed(0)} samples/s` +
        (result.skipped.length ? `; skipped ${result.skipped.length}` : ''),
    )
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)))
}
