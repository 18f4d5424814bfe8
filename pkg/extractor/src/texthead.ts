/**
 * Zero-shot text head: one L2-normalized vector per class label, averaged
 * over prompt templates ("a photo of a red fox." etc).
 */

import { Container, MAGIC_TEXT_HEAD, packContainer } from './format';
import { EmbeddingModel, l2normalize } from './model';

export const DEFAULT_TEMPLATES = [
  'a photo of a {}.',
  'a photo of the {}, a kind of animal.',
  'a camera trap photo of a {}.',
  'a cropped photo of a {} in the wild.',
];

export interface TextHeadResult {
  container: Container;
  warnings: string[];
}

export function normalizeLabel(label: string): string {
  return label.trim().toLowerCase();
}

export function buildTextHead(
  vocabulary: string[],
  model: EmbeddingModel,
  templates: string[] = DEFAULT_TEMPLATES
): TextHeadResult {
  if (vocabulary.length === 0) throw new Error('empty vocabulary');
  if (templates.length === 0) throw new Error('empty template list');

  const warnings: string[] = [];
  const labels: string[] = [];
  const seenRaw = new Set<string>();
  for (const raw of vocabulary) {
    if (seenRaw.has(raw)) throw new Error(`duplicate label ${JSON.stringify(raw)}`);
    seenRaw.add(raw);
    const label = normalizeLabel(raw);
    if (labels.includes(label)) {
      // same label up to case/whitespace: collapse, keep one head row
      warnings.push(`label ${JSON.stringify(raw)} collapsed into ${JSON.stringify(label)}`);
      continue;
    }
    labels.push(label);
  }

  const data = new Float32Array(labels.length * model.dim);
  labels.forEach((label, row) => {
    const mean = new Float64Array(model.dim);
    for (const template of templates) {
      const vec = l2normalize(model.embedText(template.replace('{}', label)));
      for (let d = 0; d < model.dim; d++) mean[d] += vec[d] / templates.length;
    }
    const unit = l2normalize(Float32Array.from(mean));
    data.set(unit, row * model.dim);
  });

  return {
    container: { ids: labels, dim: model.dim, data, normalized: true },
    warnings,
  };
}

export function packTextHead(result: TextHeadResult): Buffer {
  return packContainer(MAGIC_TEXT_HEAD, result.container);
}
