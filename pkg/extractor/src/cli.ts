#!/usr/bin/env node
/**
 * stem-extract: write STEM1/STTH1 files for one benchmark.
 *
 *   stem-extract extract --model hashed-512 --benchmark cam.json \
 *       --images crops/ --out embeddings/ [--batch-size 64]
 *       [--no-normalize] [--templates templates.txt]
 */

import { readFileSync } from 'node:fs';
import { parseArgs } from 'node:util';

import { runExtraction } from './extract';
import { createModel } from './model';
import { DEFAULT_TEMPLATES } from './texthead';

export function main(argv: string[]): number {
  if (argv[0] !== 'extract') {
    console.error('usage: stem-extract extract --model <id> --benchmark <path> --images <root> --out <dir>');
    return 2;
  }
  const { values } = parseArgs({
    args: argv.slice(1),
    options: {
      model: { type: 'string' },
      benchmark: { type: 'string' },
      images: { type: 'string' },
      out: { type: 'string' },
      'batch-size': { type: 'string', default: '64' },
      'no-normalize': { type: 'boolean', default: false },
      templates: { type: 'string' },
    },
  });
  for (const key of ['model', 'benchmark', 'images', 'out'] as const) {
    if (!values[key]) {
      console.error(`missing required --${key}`);
      return 2;
    }
  }
  try {
    const templates = values.templates
      ? readFileSync(values.templates, 'utf-8')
          .split('\n')
          .map((line) => line.trim())
          .filter(Boolean)
      : DEFAULT_TEMPLATES;
    const result = runExtraction({
      model: createModel(values.model!),
      benchmarkPath: values.benchmark!,
      imageRoot: values.images!,
      outDir: values.out!,
      batchSize: Math.max(1, parseInt(values['batch-size']!, 10)),
      normalize: !values['no-normalize'],
      templates,
    });
    for (const warning of result.warnings) console.warn(`warning: ${warning}`);
    console.log(
      `${result.cameraId}: embedded ${result.embedded} images ` +
        `(${result.missing.length} missing) -> ${result.files.embeddings}`
    );
    return 0;
  } catch (err) {
    console.error(JSON.stringify({ error: (err as Error).message }));
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
