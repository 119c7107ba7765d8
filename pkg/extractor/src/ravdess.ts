/**
 * RAVDESS filename parsing and corpus balancing.
 *
 * Filenames carry seven dash-separated two-digit codes:
 * modality-vocalChannel-emotion-intensity-statement-repetition-actor, e.g.
 * "03-01-06-01-02-01-12.wav" is audio-only speech, fearful, normal
 * intensity, statement 2, repetition 1, actor 12.
 */

export const KEPT_EMOTIONS = [
  "neutral",
  "calm",
  "happy",
  "sad",
  "angry",
  "fearful",
] as const;

export type Emotion = (typeof KEPT_EMOTIONS)[number];
export type Domain = "speech" | "music";

/** Full published emotion code table; codes 07/08 exist only for speech. */
const EMOTION_CODES: Record<string, string> = {
  "01": "neutral",
  "02": "calm",
  "03": "happy",
  "04": "sad",
  "05": "angry",
  "06": "fearful",
  "07": "disgust",
  "08": "surprised",
};

export interface RavdessInfo {
  /** 01 full-AV, 02 video-only, 03 audio-only */
  modality: string;
  domain: Domain;
  /** one of the six kept emotions, or null for disgust/surprised */
  emotion: Emotion | null;
  rawEmotion: string;
  /** 01 normal, 02 strong; carried for logs only, never stored */
  intensity: string;
  statement: string;
  repetition: string;
  actor: number;
  /** filename stem, used as the utterance id */
  stem: string;
}

const FILENAME = /^(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})$/;

export function parseRavdessFilename(filename: string): RavdessInfo | null {
  const stem = filename.replace(/\.(wav|flac|mp4)$/i, "");
  const match = FILENAME.exec(stem);
  if (match === null) {
    return null;
  }
  const [, modality, vocalChannel, emotionCode, intensity, statement, repetition, actor] =
    match;
  if (vocalChannel !== "01" && vocalChannel !== "02") {
    return null;
  }
  const emotionName = EMOTION_CODES[emotionCode];
  if (emotionName === undefined) {
    return null;
  }
  const kept = (KEPT_EMOTIONS as readonly string[]).includes(emotionName);
  return {
    modality,
    domain: vocalChannel === "01" ? "speech" : "music",
    emotion: kept ? (emotionName as Emotion) : null,
    rawEmotion: emotionName,
    intensity,
    statement,
    repetition,
    actor: parseInt(actor, 10),
    stem,
  };
}

export interface BalanceResult<T> {
  kept: T[];
  dropped: T[];
  /** actors whose speech was dropped for lacking song recordings */
  droppedActors: number[];
}

/**
 * Drop speech recordings of any actor who has no song recordings, so both
 * domains cover the same actors (one RAVDESS actress has no song set).
 */
export function balanceCorpus<T extends { domain: Domain; actor: number }>(
  records: T[],
): BalanceResult<T> {
  const songActors = new Set(
    records.filter((r) => r.domain === "music").map((r) => r.actor),
  );
  const kept: T[] = [];
  const dropped: T[] = [];
  const droppedActors = new Set<number>();
  for (const record of records) {
    if (record.domain === "speech" && !songActors.has(record.actor)) {
      dropped.push(record);
      droppedActors.add(record.actor);
    } else {
      kept.push(record);
    }
  }
  return {
    kept,
    dropped,
    droppedActors: [...droppedActors].sort((a, b) => a - b),
  };
}
