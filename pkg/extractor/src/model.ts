/**
 * Embedding backends behind one interface.
 *
 * The built-in `hashed-<dim>` model derives each coordinate from SHA-256
 * of the input bytes, so it needs no weights, is identical across
 * platforms and runs, and keeps the full pipeline testable offline. Real
 * vision-language backends (CLIP-style encoders) implement the same
 * interface and plug into the registry; they are intentionally not bundled
 * because they require model weights at runtime.
 */

import { createHash } from 'node:crypto';

export interface EmbeddingModel {
  readonly id: string;
  readonly dim: number;
  embedImage(bytes: Buffer): Float32Array;
  embedText(text: string): Float32Array;
}

export function l2normalize(vector: Float32Array): Float32Array {
  let sq = 0;
  for (let i = 0; i < vector.length; i++) sq += vector[i] * vector[i];
  const norm = Math.sqrt(sq);
  if (norm === 0) throw new Error('cannot normalize a zero vector');
  const out = new Float32Array(vector.length);
  for (let i = 0; i < vector.length; i++) out[i] = vector[i] / norm;
  return out;
}

export class HashedEmbedder implements EmbeddingModel {
  readonly id: string;
  readonly dim: number;

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 2 || dim > 8192) {
      throw new Error(`hashed model dim out of range: ${dim}`);
    }
    this.dim = dim;
    this.id = `hashed-${dim}`;
  }

  private expand(seedDigest: Buffer): Float32Array {
    const out = new Float32Array(this.dim);
    const counter = Buffer.alloc(4);
    for (let k = 0; k < this.dim; k++) {
      counter.writeUInt32BE(k, 0);
      const block = createHash('sha256').update(seedDigest).update(counter).digest();
      // first 4 bytes -> uniform in [-1, 1)
      out[k] = (block.readUInt32BE(0) / 0x100000000) * 2 - 1;
    }
    return out;
  }

  embedImage(bytes: Buffer): Float32Array {
    return this.expand(createHash('sha256').update(bytes).digest());
  }

  embedText(text: string): Float32Array {
    return this.expand(createHash('sha256').update('text:').update(text, 'utf-8').digest());
  }
}

export function createModel(id: string): EmbeddingModel {
  const hashed = /^hashed-(\d+)$/.exec(id);
  if (hashed) return new HashedEmbedder(parseInt(hashed[1], 10));
  throw new Error(
    `unknown model ${JSON.stringify(id)}; built-in: hashed-<dim> (e.g. hashed-512). ` +
      'CLIP-style backends plug in via the EmbeddingModel interface.'
  );
}
