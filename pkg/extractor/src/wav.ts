/**
 * Minimal RIFF/WAVE decoding (PCM 16/24/32-bit and float32) plus linear
 * resampling. RAVDESS ships 48 kHz 16-bit audio; the upstream models expect
 * 16 or 24 kHz mono, so decode -> mixdown -> resample covers the pipeline.
 */

export interface DecodedAudio {
  samples: Float32Array; // mono, [-1, 1]
  sampleRate: number;
}

export function decodeWav(buffer: Buffer): DecodedAudio {
  if (buffer.length < 44 || buffer.toString("latin1", 0, 4) !== "RIFF") {
    throw new Error("not a RIFF file");
  }
  if (buffer.toString("latin1", 8, 12) !== "WAVE") {
    throw new Error("not a WAVE file");
  }
  let position = 12;
  let format: { audioFormat: number; channels: number; sampleRate: number; bitsPerSample: number } | null =
    null;
  let dataStart = -1;
  let dataLength = 0;
  while (position + 8 <= buffer.length) {
    const chunkId = buffer.toString("latin1", position, position + 4);
    const chunkSize = buffer.readUInt32LE(position + 4);
    const body = position + 8;
    if (chunkId === "fmt ") {
      format = {
        audioFormat: buffer.readUInt16LE(body),
        channels: buffer.readUInt16LE(body + 2),
        sampleRate: buffer.readUInt32LE(body + 4),
        bitsPerSample: buffer.readUInt16LE(body + 14),
      };
    } else if (chunkId === "data") {
      dataStart = body;
      dataLength = Math.min(chunkSize, buffer.length - body);
    }
    position = body + chunkSize + (chunkSize % 2);
  }
  if (format === null || dataStart < 0) {
    throw new Error("missing fmt or data chunk");
  }
  const { audioFormat, channels, sampleRate, bitsPerSample } = format;
  const bytesPerSample = bitsPerSample / 8;
  const frameCount = Math.floor(dataLength / (bytesPerSample * channels));
  const samples = new Float32Array(frameCount);

  const read = (offset: number): number => {
    if (audioFormat === 3 && bitsPerSample === 32) {
      return buffer.readFloatLE(offset);
    }
    if (audioFormat === 1 && bitsPerSample === 16) {
      return buffer.readInt16LE(offset) / 32768;
    }
    if (audioFormat === 1 && bitsPerSample === 24) {
      const raw = buffer.readUIntLE(offset, 3);
      const signed = raw >= 0x800000 ? raw - 0x1000000 : raw;
      return signed / 8388608;
    }
    if (audioFormat === 1 && bitsPerSample === 32) {
      return buffer.readInt32LE(offset) / 2147483648;
    }
    throw new Error(`unsupported WAV encoding: format ${audioFormat}, ${bitsPerSample}-bit`);
  };

  for (let frame = 0; frame < frameCount; frame++) {
    let sum = 0;
    for (let channel = 0; channel < channels; channel++) {
      sum += read(dataStart + (frame * channels + channel) * bytesPerSample);
    }
    samples[frame] = sum / channels;
  }
  return { samples, sampleRate };
}

/** Linear-interpolation resampler; adequate for feature extraction. */
export function resample(
  samples: Float32Array,
  fromRate: number,
  toRate: number,
): Float32Array {
  if (fromRate === toRate || samples.length === 0) {
    return samples;
  }
  const outLength = Math.max(1, Math.round((samples.length * toRate) / fromRate));
  const out = new Float32Array(outLength);
  const step = (samples.length - 1) / Math.max(1, outLength - 1);
  for (let i = 0; i < outLength; i++) {
    const position = i * step;
    const low = Math.floor(position);
    const high = Math.min(low + 1, samples.length - 1);
    const frac = position - low;
    out[i] = samples[low] * (1 - frac) + samples[high] * frac;
  }
  return out;
}

/** PCM16 WAV encoder, used by tests to synthesize fixture audio. */
export function encodeWavPcm16(
  samples: Float32Array,
  sampleRate: number,
  channels = 1,
): Buffer {
  const dataLength = samples.length * 2;
  const buffer = Buffer.alloc(44 + dataLength);
  buffer.write("RIFF", 0, "latin1");
  buffer.writeUInt32LE(36 + dataLength, 4);
  buffer.write("WAVE", 8, "latin1");
  buffer.write("fmt ", 12, "latin1");
  buffer.writeUInt32LE(16, 16);
  buffer.writeUInt16LE(1, 20);
  buffer.writeUInt16LE(channels, 22);
  buffer.writeUInt32LE(sampleRate, 24);
  buffer.writeUInt32LE(sampleRate * channels * 2, 28);
  buffer.writeUInt16LE(channels * 2, 32);
  buffer.writeUInt16LE(16, 34);
  buffer.write("data", 36, "latin1");
  buffer.writeUInt32LE(dataLength, 40);
  for (let i = 0; i < samples.length; i++) {
    const clamped = Math.max(-1, Math.min(1, samples[i]));
    buffer.writeInt16LE(Math.round(clamped * 32767), 44 + i * 2);
  }
  return buffer;
}
