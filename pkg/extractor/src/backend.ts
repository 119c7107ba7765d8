/**
 * Inference backends: anything that turns mono audio into per-layer hidden
 * states. The hub backend (hub.ts) wraps real pretrained models; the
 * deterministic backend below lets the extraction pipeline and its tests run
 * fully offline.
 */

export interface LayerFeatures {
  numLayers: number;
  numFrames: number;
  dim: number;
  /** row-major (L, T, D) */
  data: Float32Array;
}

export interface InferenceBackend {
  readonly modelId: string;
  readonly expectedSampleRate: number;
  readonly numLayers: number;
  readonly hiddenSize: number;
  load(): Promise<void>;
  embed(samples: Float32Array): Promise<LayerFeatures>;
}

export interface TestBackendOptions {
  modelId?: string;
  sampleRate?: number;
  numLayers?: number;
  hiddenSize?: number;
  /** samples per output frame (20 ms at 16 kHz by default) */
  frameHop?: number;
}

/**
 * Offline stand-in producing deterministic features from frame statistics.
 * Same audio in, bit-identical features out, on any run and machine.
 */
export class DeterministicTestBackend implements InferenceBackend {
  readonly modelId: string;
  readonly expectedSampleRate: number;
  readonly numLayers: number;
  readonly hiddenSize: number;
  readonly frameHop: number;

  constructor(options: TestBackendOptions = {}) {
    this.modelId = options.modelId ?? "test/deterministic";
    this.expectedSampleRate = options.sampleRate ?? 16000;
    this.numLayers = options.numLayers ?? 12;
    this.hiddenSize = options.hiddenSize ?? 32;
    this.frameHop = options.frameHop ?? 320;
  }

  async load(): Promise<void> {}

  async embed(samples: Float32Array): Promise<LayerFeatures> {
    const numFrames = Math.max(1, Math.floor(samples.length / this.frameHop));
    const data = new Float32Array(this.numLayers * numFrames * this.hiddenSize);
    for (let frame = 0; frame < numFrames; frame++) {
      const start = frame * this.frameHop;
      const end = Math.min(samples.length, start + this.frameHop);
      const span = Math.max(1, end - start);
      let energy = 0;
      let mean = 0;
      let crossings = 0;
      for (let i = start; i < end; i++) {
        energy += samples[i] * samples[i];
        mean += samples[i];
        if (i > start && samples[i] >= 0 !== samples[i - 1] >= 0) {
          crossings++;
        }
      }
      energy = Math.sqrt(energy / span);
      mean /= span;
      const zcr = crossings / span; // frequency proxy; separates pitch classes
      for (let layer = 0; layer < this.numLayers; layer++) {
        const base = (layer * numFrames + frame) * this.hiddenSize;
        for (let d = 0; d < this.hiddenSize; d++) {
          data[base + d] = Math.fround(
            Math.sin((layer + 1) * 0.7 + (d + 1) * 0.31 + energy * 11.0) +
              Math.sin((d + 1) * 0.83 + zcr * (40.0 + 3.0 * layer)) +
              0.25 * Math.cos((d + 1) * 0.13 + mean * 7.0 + frame * 0.01),
          );
        }
      }
    }
    return {
      numLayers: this.numLayers,
      numFrames,
      dim: this.hiddenSize,
      data,
    };
  }
}
