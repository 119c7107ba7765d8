export { DeterministicTestBackend } from "./backend.js";
export type { InferenceBackend, LayerFeatures } from "./backend.js";
export { extract } from "./extract.js";
export type { ExtractionJob, ExtractionReport } from "./extract.js";
export { encodeRecord, writeEmbeddingFile, FORMAT_VERSION, MAGIC } from "./format.js";
export type { EmbeddingRecord } from "./format.js";
export { HUB_MODELS, HubBackend } from "./hub.js";
export { KEPT_EMOTIONS, balanceCorpus, parseRavdessFilename } from "./ravdess.js";
export type { Domain, Emotion, RavdessInfo } from "./ravdess.js";
export { decodeWav, encodeWavPcm16, resample } from "./wav.js";
