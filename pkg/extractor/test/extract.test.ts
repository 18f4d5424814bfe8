import { mkdtempSync, readFileSync, writeFileSync, mkdirSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { beforeAll, describe, expect, it } from 'vitest';

import { runExtraction } from '../src/extract';
import { MAGIC_EMBEDDINGS, MAGIC_TEXT_HEAD, parseContainer } from '../src/format';
import { createModel } from '../src/model';
import { DEFAULT_TEMPLATES, buildTextHead } from '../src/texthead';

let root: string;

function writeFixture(): { benchmark: string; images: string } {
  const images = join(root, 'crops');
  mkdirSync(images, { recursive: true });
  for (const [id, payload] of [
    ['img-001', 'fake jpeg bytes one'],
    ['img-002', 'fake jpeg bytes two'],
    ['img-003', 'fake jpeg bytes three'],
  ]) {
    writeFileSync(join(images, `${id}.jpg`), Buffer.from(payload));
  }
  const benchmark = join(root, 'cam-00.json');
  writeFileSync(
    benchmark,
    JSON.stringify({
      camera_id: 'cam-00',
      vocabulary: ['red fox', 'coyote'],
      crop_specs: {
        'img-001': [0, 0, 10, 10],
        'img-002': [0, 0, 10, 10],
        'img-003': [0, 0, 10, 10],
        'img-missing': [0, 0, 10, 10],
      },
    })
  );
  return { benchmark, images };
}

beforeAll(() => {
  root = mkdtempSync(join(tmpdir(), 'stem-extract-'));
});

describe('extraction job', () => {
  it('embeds the fixture and reports the missing crop', () => {
    const { benchmark, images } = writeFixture();
    const result = runExtraction({
      model: createModel('hashed-32'),
      benchmarkPath: benchmark,
      imageRoot: images,
      outDir: join(root, 'out'),
      batchSize: 2,
      normalize: true,
      templates: DEFAULT_TEMPLATES,
    });
    expect(result.embedded).toBe(3);
    expect(result.missing).toEqual(['img-missing']);

    const stem = parseContainer(MAGIC_EMBEDDINGS, readFileSync(result.files.embeddings));
    expect(stem.ids).toEqual(['img-001', 'img-002', 'img-003']);
    expect(stem.dim).toBe(32);
    expect(stem.normalized).toBe(true);

    const head = parseContainer(MAGIC_TEXT_HEAD, readFileSync(result.files.textHead));
    expect(head.ids).toEqual(['red fox', 'coyote']);

    const missing = JSON.parse(readFileSync(result.files.missing, 'utf-8'));
    expect(missing).toEqual({ missing: ['img-missing'] });
    const manifest = JSON.parse(readFileSync(result.files.manifest, 'utf-8'));
    expect(manifest.model).toBe('hashed-32');
    expect(manifest.templates).toEqual(DEFAULT_TEMPLATES);
  });

  it('is byte-identical across reruns', () => {
    const { benchmark, images } = writeFixture();
    const job = {
      model: createModel('hashed-32'),
      benchmarkPath: benchmark,
      imageRoot: images,
      batchSize: 64,
      normalize: true,
      templates: DEFAULT_TEMPLATES,
    };
    const first = runExtraction({ ...job, outDir: join(root, 'run1') });
    const second = runExtraction({ ...job, outDir: join(root, 'run2') });
    expect(
      readFileSync(first.files.embeddings).equals(readFileSync(second.files.embeddings))
    ).toBe(true);
    expect(readFileSync(first.files.textHead).equals(readFileSync(second.files.textHead))).toBe(
      true
    );
  });
});

describe('text head construction', () => {
  const model = createModel('hashed-16');

  it('single class single template is that embedding, normalized', () => {
    const result = buildTextHead(['red fox'], model, ['a photo of a {}.']);
    expect(result.container.ids).toEqual(['red fox']);
    const row = result.container.data.subarray(0, 16);
    let sq = 0;
    for (const v of row) sq += v * v;
    expect(Math.abs(Math.sqrt(sq) - 1)).toBeLessThan(1e-4);
  });

  it('rejects exact duplicate labels', () => {
    expect(() => buildTextHead(['red fox', 'red fox'], model)).toThrow(/duplicate/);
  });

  it('collapses case variants with a warning', () => {
    const result = buildTextHead(['red fox', 'Red Fox'], model);
    expect(result.container.ids).toEqual(['red fox']);
    expect(result.warnings).toHaveLength(1);
    expect(result.warnings[0]).toMatch(/collapsed/);
  });

  it('rejects an empty vocabulary', () => {
    expect(() => buildTextHead([], model)).toThrow(/empty/);
  });
});
