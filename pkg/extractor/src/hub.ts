/**
 * Hub-backed inference via transformers.js, loaded lazily so the rest of the
 * package works offline. Hidden states are the twelve transformer block
 * outputs (the convolutional front-end's output, "layer 0", is excluded; the
 * downstream toolkit indexes layers 1..12 accordingly).
 */

import type { InferenceBackend, LayerFeatures } from "./backend.js";

export interface HubModelSpec {
  sampleRate: number;
  numLayers: number;
  hiddenSize: number;
}

/** The three upstreams studied; all share the 12-layer base geometry. */
export const HUB_MODELS: Record<string, HubModelSpec> = {
  "facebook/wav2vec2-base-960h": { sampleRate: 16000, numLayers: 12, hiddenSize: 768 },
  "facebook/hubert-base-ls960": { sampleRate: 16000, numLayers: 12, hiddenSize: 768 },
  "m-a-p/MERT-v1-95M": { sampleRate: 24000, numLayers: 12, hiddenSize: 768 },
};

const LOAD_ATTEMPTS = 3;

export class HubBackend implements InferenceBackend {
  readonly modelId: string;
  readonly expectedSampleRate: number;
  readonly numLayers: number;
  readonly hiddenSize: number;
  private model: any = null;
  private processor: any = null;

  constructor(modelId: string, spec?: HubModelSpec) {
    const known = spec ?? HUB_MODELS[modelId];
    if (known === undefined) {
      throw new Error(
        `unknown hub model '${modelId}'; pass a spec or use one of ` +
          Object.keys(HUB_MODELS).join(", "),
      );
    }
    this.modelId = modelId;
    this.expectedSampleRate = known.sampleRate;
    this.numLayers = known.numLayers;
    this.hiddenSize = known.hiddenSize;
  }

  /** Download/load with retries; aborts after LOAD_ATTEMPTS failures. */
  async load(): Promise<void> {
    if (this.model !== null) {
      return;
    }
    const transformers = await importTransformers();
    let lastError: unknown = null;
    for (let attempt = 1; attempt <= LOAD_ATTEMPTS; attempt++) {
      try {
        this.processor = await transformers.AutoProcessor.from_pretrained(this.modelId);
        this.model = await transformers.AutoModel.from_pretrained(this.modelId, {
          output_hidden_states: true,
        });
        return;
      } catch (error) {
        lastError = error;
        console.error(
          `load attempt ${attempt}/${LOAD_ATTEMPTS} for ${this.modelId} failed: ${error}`,
        );
      }
    }
    throw new Error(`could not load ${this.modelId} after ${LOAD_ATTEMPTS} attempts: ${lastError}`);
  }

  async embed(samples: Float32Array): Promise<LayerFeatures> {
    if (this.model === null) {
      await this.load();
    }
    const inputs = await this.processor(samples, {
      sampling_rate: this.expectedSampleRate,
    });
    const output = await this.model(inputs, { output_hidden_states: true });
    const hidden = output.hidden_states;
    if (!Array.isArray(hidden) || hidden.length < this.numLayers + 1) {
      throw new Error(
        `${this.modelId} returned ${hidden?.length ?? 0} hidden states, ` +
          `expected ${this.numLayers + 1}`,
      );
    }
    // hidden[0] is the front-end output; blocks 1..numLayers follow.
    const first = hidden[1];
    const [, numFrames, dim] = first.dims as [number, number, number];
    const data = new Float32Array(this.numLayers * numFrames * dim);
    for (let layer = 0; layer < this.numLayers; layer++) {
      const tensor = hidden[layer + 1];
      data.set(tensor.data as Float32Array, layer * numFrames * dim);
    }
    return { numLayers: this.numLayers, numFrames, dim, data };
  }
}

async function importTransformers(): Promise<any> {
  const candidates = ["@huggingface/transformers", "@xenova/transformers"];
  for (const name of candidates) {
    try {
      return await import(name);
    } catch {
      // try the next candidate
    }
  }
  throw new Error(
    "transformers.js is not installed; run `npm install @huggingface/transformers` " +
      "to enable hub extraction, or use --backend test",
  );
}
