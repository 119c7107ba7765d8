/**
 * Writer for the crossemo binary embedding format (.xemb), version 1.
 *
 * Layout (little-endian):
 *   header   magic(8) | version u32 | L u32 | D u32 | recordCount u64 | indexOffset u64
 *   records  idLen u16 | domain u8 | emotion u8 | tagLen u16 | T u32
 *            | utteranceId | modelTag | L*T*D float32 payload
 *   index    recordCount x (offset u64, byteLength u64)
 *
 * L and D are fixed per file; T may vary per record. Records stream to disk
 * one at a time and the header is patched last, so corpora larger than
 * memory write fine.
 */

import { closeSync, openSync, writeSync } from "node:fs";

import type { Domain, Emotion } from "./ravdess.js";
import { KEPT_EMOTIONS } from "./ravdess.js";

export const MAGIC = Buffer.from([0x58, 0x45, 0x4d, 0x42, 0x0d, 0x0a, 0x1a, 0x0a]); // "XEMB\r\n\x1a\n"
export const FORMAT_VERSION = 1;
export const HEADER_SIZE = 8 + 4 + 4 + 4 + 8 + 8;

const DOMAINS: readonly Domain[] = ["speech", "music"];

export interface EmbeddingRecord {
  utteranceId: string;
  domain: Domain;
  emotion: Emotion;
  modelTag: string;
  numLayers: number;
  numFrames: number;
  dim: number;
  /** row-major (L, T, D) */
  data: Float32Array;
}

function validateRecord(record: EmbeddingRecord): void {
  const { numLayers, numFrames, dim, data, utteranceId } = record;
  if (numLayers < 1 || numFrames < 1 || dim < 1) {
    throw new Error(`record '${utteranceId}': L, T, D must all be >= 1`);
  }
  if (data.length !== numLayers * numFrames * dim) {
    throw new Error(
      `record '${utteranceId}': payload has ${data.length} values, ` +
        `expected ${numLayers * numFrames * dim}`,
    );
  }
  if (!DOMAINS.includes(record.domain)) {
    throw new Error(`record '${utteranceId}': unknown domain '${record.domain}'`);
  }
  if (!(KEPT_EMOTIONS as readonly string[]).includes(record.emotion)) {
    throw new Error(`record '${utteranceId}': unknown emotion '${record.emotion}'`);
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`record '${utteranceId}': non-finite value in payload`);
    }
  }
}

function encodeHeader(
  numLayers: number,
  dim: number,
  recordCount: number,
  indexOffset: number,
): Buffer {
  const header = Buffer.alloc(HEADER_SIZE);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(FORMAT_VERSION, 8);
  header.writeUInt32LE(numLayers, 12);
  header.writeUInt32LE(dim, 16);
  header.writeBigUInt64LE(BigInt(recordCount), 20);
  header.writeBigUInt64LE(BigInt(indexOffset), 28);
  return header;
}

export function encodeRecord(record: EmbeddingRecord): Buffer {
  validateRecord(record);
  const idBytes = Buffer.from(record.utteranceId, "utf-8");
  const tagBytes = Buffer.from(record.modelTag, "utf-8");
  if (idBytes.length > 0xffff || tagBytes.length > 0xffff) {
    throw new Error(`record '${record.utteranceId}': id/tag too long`);
  }
  const head = Buffer.alloc(10);
  head.writeUInt16LE(idBytes.length, 0);
  head.writeUInt8(DOMAINS.indexOf(record.domain), 2);
  head.writeUInt8((KEPT_EMOTIONS as readonly string[]).indexOf(record.emotion), 3);
  head.writeUInt16LE(tagBytes.length, 4);
  head.writeUInt32LE(record.numFrames, 6);
  // Float32Array is platform-endian; every supported Node target is LE, but
  // guard anyway so a BE host cannot silently write a corrupt file.
  let payload: Buffer;
  if (isLittleEndianHost()) {
    payload = Buffer.from(record.data.buffer, record.data.byteOffset, record.data.byteLength);
  } else {
    payload = Buffer.alloc(record.data.length * 4);
    for (let i = 0; i < record.data.length; i++) {
      payload.writeFloatLE(record.data[i], i * 4);
    }
  }
  return Buffer.concat([head, idBytes, tagBytes, payload]);
}

function isLittleEndianHost(): boolean {
  return new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;
}

/**
 * Write records to ``path``; returns each record's byte offset.
 *
 * All records must share L and D and carry unique utterance ids, matching
 * what the crossemo reader and `crossemo validate` enforce.
 */
export function writeEmbeddingFile(records: EmbeddingRecord[], path: string): number[] {
  const seen = new Set<string>();
  for (const record of records) {
    if (seen.has(record.utteranceId)) {
      throw new Error(`duplicate utterance id '${record.utteranceId}'`);
    }
    seen.add(record.utteranceId);
  }
  const numLayers = records.length > 0 ? records[0].numLayers : 0;
  const dim = records.length > 0 ? records[0].dim : 0;
  for (const record of records) {
    if (record.numLayers !== numLayers || record.dim !== dim) {
      throw new Error(
        `record '${record.utteranceId}' has (L=${record.numLayers}, D=${record.dim}), ` +
          `file is (L=${numLayers}, D=${dim})`,
      );
    }
  }

  const fd = openSync(path, "w");
  try {
    let position = 0;
    position += writeSync(fd, encodeHeader(numLayers, dim, 0, 0), 0, HEADER_SIZE, 0);
    const offsets: number[] = [];
    const lengths: number[] = [];
    for (const record of records) {
      const blob = encodeRecord(record);
      offsets.push(position);
      lengths.push(blob.length);
      position += writeSync(fd, blob, 0, blob.length, position);
    }
    const indexOffset = position;
    const index = Buffer.alloc(records.length * 16);
    for (let i = 0; i < records.length; i++) {
      index.writeBigUInt64LE(BigInt(offsets[i]), i * 16);
      index.writeBigUInt64LE(BigInt(lengths[i]), i * 16 + 8);
    }
    writeSync(fd, index, 0, index.length, indexOffset);
    writeSync(
      fd,
      encodeHeader(numLayers, dim, records.length, indexOffset),
      0,
      HEADER_SIZE,
      0,
    );
    return offsets;
  } finally {
    closeSync(fd);
  }
}
