/**
 * Shared types: wire payloads mirroring the counting service's /api schema,
 * and the client-side prompt model.
 */

/** Counting modes understood by POST /api/count. */
export type CountMode = "prior" | "vanilla" | "unfiltered";

/** Run-length encoded binary mask: counts alternate 0-runs and 1-runs, row-major. */
export interface RleMaskData {
  width: number;
  height: number;
  counts: number[];
}

/** One scored mask from a count response. */
export interface MaskPayload {
  rle: RleMaskData;
  score: number;
  quality: number;
}

/** Execution counters reported with every count. */
export interface RunStatsPayload {
  decoder_calls: number;
  points_pruned_by_similarity_prior: number;
  points_pruned_by_segment_prior: number;
  batches_skipped: number;
  wall_time: number;
}

/** Response of POST /api/count. */
export interface CountResponse {
  session_id: string;
  mode: CountMode;
  count: number;
  masks: MaskPayload[];
  stats: RunStatsPayload;
  /** Base64 tensor container holding the (grid_h, grid_w) similarity map, if any. */
  similarity: string | null;
}

/** Response of POST /api/images. */
export interface UploadResponse {
  session_id: string;
  width: number;
  height: number;
}

/** Response of GET /api/health. */
export interface HealthResponse {
  status: string;
  capabilities: Record<string, unknown>;
}

/** A positive (label 1) or negative (label 0) point prompt in image pixels. */
export interface PointPrompt {
  kind: "point";
  x: number;
  y: number;
  label: 0 | 1;
}

/** A half-open box prompt: pixels with x0 <= x < x1 and y0 <= y < y1. */
export interface BoxPrompt {
  kind: "box";
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export type Prompt = PointPrompt | BoxPrompt;

/** Pipeline knobs exposed as sliders; null means "let the service decide". */
export interface CountConfig {
  epsilon: number;
  points_per_side: number | null;
}

export const DEFAULT_CONFIG: CountConfig = { epsilon: 0.5, points_per_side: null };
