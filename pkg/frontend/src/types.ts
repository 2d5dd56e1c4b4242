/** Wire formats of the trial service (JSON bodies, field-for-field). */

export interface SessionSummary {
  session_id: string;
  subject: string;
  trial_count: number;
  practice_count: number;
  timing_ms: TimingMs;
}

export interface TimingMs {
  fixation: number;
  stimulus: number;
  post: number;
  response_window: number;
}

export interface AvatarSpec {
  index: number;
  azimuth: number;
  lips_animated: boolean;
  arm_animated: boolean;
}

export interface TrialPayload {
  index: number;
  is_practice: boolean;
  timing_ms: TimingMs;
  avatars: AvatarSpec[];
  audio_url: string;
}

export interface ResponseBody {
  index: number;
  choice: number; // 0..3, or -1 for a timeout
  reaction_ms: number | null;
}

export interface ResponseAck {
  recorded: boolean;
  timeout: boolean;
  next_index: number | null;
  awaiting_strategy: boolean;
}

export type Strategy = "auditory" | "visual" | "mixed";

/** One exported behavioural record (line-delimited JSON after the header). */
export interface ExportRecord {
  subject_id: string;
  trial_id: number;
  session: number;
  condition: string;
  audio_pos: number;
  lips_pos: number | null;
  arm_pos: number | null;
  syllables: string[];
  response: number;
  source: string;
  strategy: string | null;
  reaction_ms: number | null;
  timeout: boolean;
}

const CONDITIONS = new Set([
  "baseline",
  "lips",
  "arm",
  "lips_arm",
  "lips_vs_arm",
]);

function isAvatarIndex(v: unknown): boolean {
  return typeof v === "number" && Number.isInteger(v) && v >= 0 && v <= 3;
}

/** Validate one export line against the behavioural-record schema. */
export function validateExportRecord(raw: unknown): raw is ExportRecord {
  if (typeof raw !== "object" || raw === null) return false;
  const r = raw as Record<string, unknown>;
  if (typeof r.subject_id !== "string" || r.subject_id.length === 0) return false;
  if (typeof r.trial_id !== "number" || !Number.isInteger(r.trial_id)) return false;
  if (![1, 2, 3].includes(r.session as number)) return false;
  if (typeof r.condition !== "string" || !CONDITIONS.has(r.condition)) return false;
  if (!isAvatarIndex(r.audio_pos)) return false;
  if (r.lips_pos !== null && !isAvatarIndex(r.lips_pos)) return false;
  if (r.arm_pos !== null && !isAvatarIndex(r.arm_pos)) return false;
  if (!Array.isArray(r.syllables) || r.syllables.length !== 3) return false;
  if (!r.syllables.every((s) => typeof s === "string")) return false;
  const timeout = r.timeout;
  if (typeof timeout !== "boolean") return false;
  if (timeout) {
    if (r.response !== -1) return false;
  } else if (!isAvatarIndex(r.response)) {
    return false;
  }
  if (typeof r.source !== "string") return false;
  if (r.strategy !== null && typeof r.strategy !== "string") return false;
  if (r.reaction_ms !== null && typeof r.reaction_ms !== "number") return false;
  return true;
}

/** Parse a line-delimited export: a header object then one record per line. */
export function parseExport(text: string): ExportRecord[] {
  const lines = text.split("\n").filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) throw new Error("empty export");
  const header = JSON.parse(lines[0]);
  if (header.kind !== "behavioral-dataset") {
    throw new Error("missing behavioral-dataset header");
  }
  return lines.slice(1).map((ln, i) => {
    const parsed = JSON.parse(ln);
    if (!validateExportRecord(parsed)) {
      throw new Error(`schema violation on record ${i}`);
    }
    return parsed;
  });
}
