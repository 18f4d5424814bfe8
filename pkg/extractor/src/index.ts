export {
  Container,
  FormatError,
  MAGIC_EMBEDDINGS,
  MAGIC_TEXT_HEAD,
  packContainer,
  parseContainer,
} from './format';
export { EmbeddingModel, HashedEmbedder, createModel, l2normalize } from './model';
export { DEFAULT_TEMPLATES, buildTextHead, packTextHead, normalizeLabel } from './texthead';
export { ExtractionJob, ExtractionResult, runExtraction } from './extract';
