/**
 * Prompt construction from canvas gestures, and serialization of the prompt
 * list into /api/count request fields.
 *
 * Boxes are half-open ([x0, x1) x [y0, y1)) to match the service exactly: a
 * drag covering pixels a..b stores x1 = b + 1, and off-by-one matters for
 * tiny exemplars.
 */

import type { BoxPrompt, CountConfig, CountMode, PointPrompt, Prompt } from "./types.js";

/**
 * Build a point prompt from a click at image coordinates, or null when the
 * click lands outside the image.
 */
export function pointFromClick(
  x: number,
  y: number,
  imageWidth: number,
  imageHeight: number,
  negative = false,
): PointPrompt | null {
  if (!(x >= 0 && x < imageWidth && y >= 0 && y < imageHeight)) return null;
  return { kind: "point", x, y, label: negative ? 0 : 1 };
}

/**
 * Build a half-open box prompt from two drag corners in image coordinates.
 *
 * The dragged pixels (floored corners, inclusive) become [x0, x1) x [y0, y1),
 * clamped to the image. Returns null when the clamped box has zero area —
 * the client-side rejection for degenerate drags.
 */
export function boxFromCorners(
  ax: number,
  ay: number,
  bx: number,
  by: number,
  imageWidth: number,
  imageHeight: number,
): BoxPrompt | null {
  let x0 = Math.floor(Math.min(ax, bx));
  let y0 = Math.floor(Math.min(ay, by));
  let x1 = Math.floor(Math.max(ax, bx)) + 1;
  let y1 = Math.floor(Math.max(ay, by)) + 1;
  x0 = Math.max(0, x0);
  y0 = Math.max(0, y0);
  x1 = Math.min(imageWidth, x1);
  y1 = Math.min(imageHeight, y1);
  if (x1 <= x0 || y1 <= y0) return null;
  return { kind: "box", x0, y0, x1, y1 };
}

/** One-line label for the prompt list panel. */
export function describePrompt(prompt: Prompt): string {
  if (prompt.kind === "point") {
    const sign = prompt.label === 1 ? "+" : "-";
    return `${sign}point (${Math.round(prompt.x)}, ${Math.round(prompt.y)})`;
  }
  return `box [${prompt.x0}, ${prompt.y0}) → [${prompt.x1}, ${prompt.y1})`;
}

/**
 * True when a count can be requested: at least one geometric prompt, or a
 * non-empty text prompt. The service rejects empty prompt sets.
 */
export function canCount(prompts: readonly Prompt[], text: string): boolean {
  return prompts.length > 0 || text.trim().length > 0;
}

/** Request body for POST /api/count. */
export interface CountRequestBody {
  session_id: string;
  points?: { x: number; y: number; label: number }[];
  boxes?: [number, number, number, number][];
  text?: string;
  mode: CountMode;
  config: Record<string, number>;
}

/**
 * Serialize prompts and config into the count request body.
 *
 * The service treats text as exclusive with geometric prompts, so text is
 * sent only when no points or boxes exist (the UI disables the text field in
 * that state for the same reason).
 */
export function buildCountRequest(
  sessionId: string,
  prompts: readonly Prompt[],
  text: string,
  mode: CountMode,
  config: CountConfig,
): CountRequestBody {
  const points = prompts
    .filter((p): p is PointPrompt => p.kind === "point")
    .map((p) => ({ x: p.x, y: p.y, label: p.label }));
  const boxes = prompts
    .filter((p): p is BoxPrompt => p.kind === "box")
    .map((p): [number, number, number, number] => [p.x0, p.y0, p.x1, p.y1]);
  const body: CountRequestBody = { session_id: sessionId, mode, config: { epsilon: config.epsilon } };
  if (config.points_per_side !== null) {
    body.config["points_per_side"] = config.points_per_side;
  }
  if (points.length > 0) body.points = points;
  if (boxes.length > 0) body.boxes = boxes;
  const trimmed = text.trim();
  if (points.length === 0 && boxes.length === 0 && trimmed.length > 0) {
    body.text = trimmed;
  }
  return body;
}
