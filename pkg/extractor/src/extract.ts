/**
 * Extraction pipeline: scan a RAVDESS audio tree, parse and balance the
 * corpus, run each recording through an inference backend, and stream the
 * per-layer hidden states into a crossemo embedding file.
 */

import { readFileSync, readdirSync, statSync } from "node:fs";
import { basename, join } from "node:path";

import type { InferenceBackend } from "./backend.js";
import type { EmbeddingRecord } from "./format.js";
import { writeEmbeddingFile } from "./format.js";
import type { Emotion, RavdessInfo } from "./ravdess.js";
import { balanceCorpus, parseRavdessFilename } from "./ravdess.js";
import { decodeWav, resample } from "./wav.js";

export interface ExtractionJob {
  audioRoot: string;
  outputPath: string;
  backend: InferenceBackend;
  /** defaults to the backend's expected rate */
  targetSampleRate?: number;
  /** 1-based inclusive layer window; defaults to every backend layer */
  layerRange?: [number, number];
  log?: (message: string) => void;
}

export interface SkippedFile {
  file: string;
  reason: string;
}

export interface ExtractionReport {
  written: number;
  outputPath: string;
  skipped: SkippedFile[];
  droppedActors: number[];
  resampledCount: number;
  countsByDomain: Record<string, number>;
}

interface CandidateFile extends RavdessInfo {
  path: string;
  emotion: Emotion; // narrowed: disgust/surprised are skipped before this
}

function listWavFiles(root: string): string[] {
  const out: string[] = [];
  const walk = (dir: string) => {
    for (const entry of readdirSync(dir)) {
      const full = join(dir, entry);
      if (statSync(full).isDirectory()) {
        walk(full);
      } else if (/\.wav$/i.test(entry)) {
        out.push(full);
      }
    }
  };
  walk(root);
  return out.sort();
}

export async function extract(job: ExtractionJob): Promise<ExtractionReport> {
  const log = job.log ?? ((message: string) => console.error(message));
  const targetRate = job.targetSampleRate ?? job.backend.expectedSampleRate;
  const [layerLow, layerHigh] = job.layerRange ?? [1, job.backend.numLayers];
  if (layerLow < 1 || layerHigh > job.backend.numLayers || layerLow > layerHigh) {
    throw new Error(
      `layer range ${layerLow}..${layerHigh} outside 1..${job.backend.numLayers}`,
    );
  }

  const skipped: SkippedFile[] = [];
  const candidates: CandidateFile[] = [];
  for (const path of listWavFiles(job.audioRoot)) {
    const name = basename(path);
    const info = parseRavdessFilename(name);
    if (info === null) {
      skipped.push({ file: name, reason: "unparseable filename" });
      log(`skip ${name}: unparseable filename`);
      continue;
    }
    if (info.emotion === null) {
      skipped.push({ file: name, reason: `emotion '${info.rawEmotion}' not kept` });
      continue;
    }
    candidates.push({ ...info, emotion: info.emotion, path });
  }

  const { kept, dropped, droppedActors } = balanceCorpus(candidates);
  for (const record of dropped) {
    skipped.push({
      file: basename(record.path),
      reason: `actor ${record.actor} has no song recordings`,
    });
  }
  if (droppedActors.length > 0) {
    log(`balance: dropped speech of actors [${droppedActors.join(", ")}]`);
  }

  await job.backend.load();
  const records: EmbeddingRecord[] = [];
  const countsByDomain: Record<string, number> = { speech: 0, music: 0 };
  let resampledCount = 0;
  for (const candidate of kept) {
    const name = basename(candidate.path);
    let audio;
    try {
      audio = decodeWav(readFileSync(candidate.path));
    } catch (error) {
      skipped.push({ file: name, reason: `decode failed: ${error}` });
      log(`skip ${name}: decode failed (${error})`);
      continue;
    }
    if (audio.samples.length === 0) {
      skipped.push({ file: name, reason: "zero-length audio" });
      log(`skip ${name}: zero-length audio`);
      continue;
    }
    let samples = audio.samples;
    if (audio.sampleRate !== targetRate) {
      samples = resample(samples, audio.sampleRate, targetRate);
      resampledCount++;
      log(`resample ${name}: ${audio.sampleRate} -> ${targetRate} Hz`);
    }
    const features = await job.backend.embed(samples);
    const layerCount = layerHigh - layerLow + 1;
    const frameBlock = features.numFrames * features.dim;
    const window =
      layerCount === features.numLayers
        ? features.data
        : features.data.slice((layerLow - 1) * frameBlock, layerHigh * frameBlock);
    records.push({
      utteranceId: candidate.stem,
      domain: candidate.domain,
      emotion: candidate.emotion,
      modelTag: job.backend.modelId,
      numLayers: layerCount,
      numFrames: features.numFrames,
      dim: features.dim,
      data: window,
    });
    countsByDomain[candidate.domain]++;
  }

  writeEmbeddingFile(records, job.outputPath);
  return {
    written: records.length,
    outputPath: job.outputPath,
    skipped,
    droppedActors,
    resampledCount,
    countsByDomain,
  };
}
