/**
 * STEM1 / STTH1 container format (shared with the evaluation engine).
 *
 * Layout, all integers little-endian:
 *   magic[5]   "STEM1" (image embeddings) or "STTH1" (text head)
 *   version    u32 (= 1)
 *   count      u32 rows
 *   dim        u32 columns
 *   normalized u8  nonzero if rows are L2-normalized
 *   ids        count x (u16 length + UTF-8 bytes)
 *   data       count*dim float32, row-major
 */

export const MAGIC_EMBEDDINGS = 'STEM1';
export const MAGIC_TEXT_HEAD = 'STTH1';
export const FORMAT_VERSION = 1;
export const NORM_TOLERANCE = 1e-4;

export interface Container {
  ids: string[];
  dim: number;
  data: Float32Array; // ids.length * dim values, row-major
  normalized: boolean;
}

export class FormatError extends Error {}

function checkRows(container: Container): void {
  const { ids, dim, data, normalized } = container;
  if (dim <= 0) throw new FormatError('dim must be positive');
  if (data.length !== ids.length * dim) {
    throw new FormatError(`data length ${data.length} != ${ids.length} x ${dim}`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) throw new FormatError(`non-finite value at ${i}`);
  }
  if (normalized) {
    for (let r = 0; r < ids.length; r++) {
      let sq = 0;
      for (let d = 0; d < dim; d++) sq += data[r * dim + d] * data[r * dim + d];
      const norm = Math.sqrt(sq);
      if (Math.abs(norm - 1) > NORM_TOLERANCE) {
        throw new FormatError(`row ${r} has norm ${norm.toFixed(6)}, expected 1`);
      }
    }
  }
}

export function packContainer(magic: string, container: Container): Buffer {
  checkRows(container);
  const { ids, dim, data, normalized } = container;
  const idBuffers = ids.map((id) => {
    const raw = Buffer.from(id, 'utf-8');
    if (raw.length > 0xffff) throw new FormatError(`id too long: ${id.slice(0, 32)}...`);
    const framed = Buffer.alloc(2 + raw.length);
    framed.writeUInt16LE(raw.length, 0);
    raw.copy(framed, 2);
    return framed;
  });
  const header = Buffer.alloc(5 + 4 + 4 + 4 + 1);
  header.write(magic, 0, 'ascii');
  header.writeUInt32LE(FORMAT_VERSION, 5);
  header.writeUInt32LE(ids.length, 9);
  header.writeUInt32LE(dim, 13);
  header.writeUInt8(normalized ? 1 : 0, 17);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], i * 4);
  return Buffer.concat([header, ...idBuffers, payload]);
}

export function parseContainer(magic: string, blob: Buffer): Container {
  let pos = 0;
  const take = (n: number): Buffer => {
    if (pos + n > blob.length) throw new FormatError('truncated container');
    const chunk = blob.subarray(pos, pos + n);
    pos += n;
    return chunk;
  };
  const got = take(5).toString('ascii');
  if (got !== magic) throw new FormatError(`bad magic ${JSON.stringify(got)}`);
  const version = take(4).readUInt32LE(0);
  if (version !== FORMAT_VERSION) throw new FormatError(`unsupported version ${version}`);
  const count = take(4).readUInt32LE(0);
  const dim = take(4).readUInt32LE(0);
  if (dim <= 0) throw new FormatError('dim must be positive');
  const normalized = take(1).readUInt8(0) !== 0;
  const ids: string[] = [];
  for (let i = 0; i < count; i++) {
    const length = take(2).readUInt16LE(0);
    ids.push(take(length).toString('utf-8'));
  }
  const raw = take(count * dim * 4);
  if (pos !== blob.length) throw new FormatError('trailing bytes');
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) data[i] = raw.readFloatLE(i * 4);
  const container = { ids, dim, data, normalized };
  checkRows(container);
  return container;
}
