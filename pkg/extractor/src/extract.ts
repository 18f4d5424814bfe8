/**
 * Extraction job: embed every image id in a benchmark file and build the
 * matching text head.
 *
 * Image crops are read as `<imageRoot>/<id>.jpg` (the crop step of the
 * benchmark pipeline writes them under that name). Unreadable or missing
 * crops are skipped and listed in `<camera>.missing.json`; everything else
 * lands in `<camera>.stem` / `<camera>.stth` plus an `<camera>.extract.json`
 * manifest recording the model, dimension, and template set.
 */

import { readFileSync, writeFileSync, mkdirSync } from 'node:fs';
import { join } from 'node:path';

import { Container, MAGIC_EMBEDDINGS, packContainer } from './format';
import { EmbeddingModel, l2normalize } from './model';
import { DEFAULT_TEMPLATES, buildTextHead, packTextHead } from './texthead';

export interface ExtractionJob {
  model: EmbeddingModel;
  benchmarkPath: string;
  imageRoot: string;
  outDir: string;
  batchSize: number;
  normalize: boolean;
  templates: string[];
}

export interface ExtractionResult {
  cameraId: string;
  embedded: number;
  missing: string[];
  warnings: string[];
  files: { embeddings: string; textHead: string; missing: string; manifest: string };
}

interface BenchmarkFile {
  camera_id: string;
  vocabulary: string[];
  crop_specs: Record<string, unknown>;
}

export function runExtraction(job: ExtractionJob): ExtractionResult {
  const benchmark = JSON.parse(readFileSync(job.benchmarkPath, 'utf-8')) as BenchmarkFile;
  if (!benchmark.camera_id || !benchmark.crop_specs || !benchmark.vocabulary) {
    throw new Error(`${job.benchmarkPath} is not a benchmark file`);
  }
  const ids = Object.keys(benchmark.crop_specs).sort();
  if (ids.length === 0) throw new Error('benchmark lists no images');

  const kept: string[] = [];
  const rows: Float32Array[] = [];
  const missing: string[] = [];
  for (let start = 0; start < ids.length; start += job.batchSize) {
    const batch = ids.slice(start, start + job.batchSize);
    for (const id of batch) {
      let bytes: Buffer;
      try {
        bytes = readFileSync(join(job.imageRoot, `${id}.jpg`));
      } catch {
        missing.push(id);
        continue;
      }
      const vec = job.model.embedImage(bytes);
      rows.push(job.normalize ? l2normalize(vec) : vec);
      kept.push(id);
    }
  }
  if (kept.length === 0) throw new Error('no readable images; nothing to embed');

  const data = new Float32Array(kept.length * job.model.dim);
  rows.forEach((row, r) => data.set(row, r * job.model.dim));
  const container: Container = {
    ids: kept,
    dim: job.model.dim,
    data,
    normalized: job.normalize,
  };

  const head = buildTextHead(benchmark.vocabulary, job.model, job.templates);

  mkdirSync(job.outDir, { recursive: true });
  const files = {
    embeddings: join(job.outDir, `${benchmark.camera_id}.stem`),
    textHead: join(job.outDir, `${benchmark.camera_id}.stth`),
    missing: join(job.outDir, `${benchmark.camera_id}.missing.json`),
    manifest: join(job.outDir, `${benchmark.camera_id}.extract.json`),
  };
  writeFileSync(files.embeddings, packContainer(MAGIC_EMBEDDINGS, container));
  writeFileSync(files.textHead, packTextHead(head));
  writeFileSync(files.missing, JSON.stringify({ missing }, null, 1) + '\n');
  writeFileSync(
    files.manifest,
    JSON.stringify(
      {
        camera_id: benchmark.camera_id,
        model: job.model.id,
        dim: job.model.dim,
        normalized: job.normalize,
        templates: job.templates,
        embedded: kept.length,
        missing: missing.length,
        classes: head.container.ids.length,
      },
      null,
      1
    ) + '\n'
  );
  return {
    cameraId: benchmark.camera_id,
    embedded: kept.length,
    missing,
    warnings: head.warnings,
    files,
  };
}

export { DEFAULT_TEMPLATES };
