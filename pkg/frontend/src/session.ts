/**
 * Client-side session state: the prompt list, slider config, and last
 * result, with JSON export/import and the single-in-flight count scheduler.
 */

import type { CountConfig, CountMode, CountResponse, Prompt } from "./types.js";
import { DEFAULT_CONFIG } from "./types.js";

const EXPORT_VERSION = 1;
const MODES: readonly CountMode[] = ["prior", "vanilla", "unfiltered"];

export interface UiSession {
  sessionId: string | null;
  imageWidth: number;
  imageHeight: number;
  /** Ordered, individually deletable prompts. */
  prompts: Prompt[];
  text: string;
  mode: CountMode;
  config: CountConfig;
  lastResult: CountResponse | null;
}

export function createSession(): UiSession {
  return {
    sessionId: null,
    imageWidth: 0,
    imageHeight: 0,
    prompts: [],
    text: "",
    mode: "prior",
    config: { ...DEFAULT_CONFIG },
    lastResult: null,
  };
}

/** Remove the prompt at index; out-of-range indices are ignored. */
export function removePrompt(session: UiSession, index: number): void {
  if (index >= 0 && index < session.prompts.length) {
    session.prompts.splice(index, 1);
  }
}

/**
 * Serialize the session for download. The image itself stays on the server
 * (referenced by session id); prompts and config are what round-trip.
 */
export function exportSession(session: UiSession): string {
  return JSON.stringify(
    {
      version: EXPORT_VERSION,
      session_id: session.sessionId,
      image: { width: session.imageWidth, height: session.imageHeight },
      prompts: session.prompts,
      text: session.text,
      mode: session.mode,
      config: session.config,
    },
    null,
    2,
  );
}

function asFinite(value: unknown, what: string): number {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new Error(`session import: ${what} is not a finite number`);
  }
  return value;
}

function parsePrompt(raw: unknown, index: number): Prompt {
  const p = raw as Record<string, unknown>;
  if (p === null || typeof p !== "object") {
    throw new Error(`session import: prompt ${index} is not an object`);
  }
  if (p["kind"] === "point") {
    const label = p["label"];
    if (label !== 0 && label !== 1) {
      throw new Error(`session import: prompt ${index} has label ${label}, expected 0 or 1`);
    }
    return {
      kind: "point",
      x: asFinite(p["x"], `prompt ${index} x`),
      y: asFinite(p["y"], `prompt ${index} y`),
      label,
    };
  }
  if (p["kind"] === "box") {
    const box = {
      kind: "box" as const,
      x0: asFinite(p["x0"], `prompt ${index} x0`),
      y0: asFinite(p["y0"], `prompt ${index} y0`),
      x1: asFinite(p["x1"], `prompt ${index} x1`),
      y1: asFinite(p["y1"], `prompt ${index} y1`),
    };
    if (box.x1 <= box.x0 || box.y1 <= box.y0) {
      throw new Error(`session import: prompt ${index} box has zero area`);
    }
    return box;
  }
  throw new Error(`session import: prompt ${index} has unknown kind ${String(p["kind"])}`);
}

/**
 * Rebuild a session from exported JSON. Prompts, text, mode, and config are
 * restored exactly; the last result is not carried over (a re-run recomputes
 * it against the live service).
 */
export function importSession(json: string): UiSession {
  let raw: unknown;
  try {
    raw = JSON.parse(json);
  } catch (err) {
    throw new Error(`session import: not JSON (${(err as Error).message})`);
  }
  const doc = raw as Record<string, unknown>;
  if (doc === null || typeof doc !== "object") {
    throw new Error("session import: top level is not an object");
  }
  if (doc["version"] !== EXPORT_VERSION) {
    throw new Error(`session import: unsupported version ${String(doc["version"])}`);
  }
  if (!Array.isArray(doc["prompts"])) {
    throw new Error("session import: prompts is not an array");
  }
  const mode = doc["mode"];
  if (!MODES.includes(mode as CountMode)) {
    throw new Error(`session import: unknown mode ${String(mode)}`);
  }
  const config = doc["config"] as Record<string, unknown>;
  if (config === null || typeof config !== "object") {
    throw new Error("session import: config is not an object");
  }
  const pps = config["points_per_side"];
  const image = (doc["image"] ?? {}) as Record<string, unknown>;
  const session = createSession();
  session.sessionId = typeof doc["session_id"] === "string" ? doc["session_id"] : null;
  session.imageWidth = typeof image["width"] === "number" ? image["width"] : 0;
  session.imageHeight = typeof image["height"] === "number" ? image["height"] : 0;
  session.prompts = (doc["prompts"] as unknown[]).map(parsePrompt);
  session.text = typeof doc["text"] === "string" ? doc["text"] : "";
  session.mode = mode as CountMode;
  session.config = {
    epsilon: asFinite(config["epsilon"], "config epsilon"),
    points_per_side: pps === null || pps === undefined ? null : asFinite(pps, "config points_per_side"),
  };
  return session;
}

/**
 * Coalescing runner for count requests: at most one in flight, and any
 * number of requests during a run collapse into a single pending re-run.
 */
export class CountScheduler {
  private running = false;
  private pending = false;

  constructor(private readonly run: () => Promise<void>) {}

  get busy(): boolean {
    return this.running;
  }

  /**
   * Request a (re-)run. Resolves once the scheduler drains; callers that
   * only queued a re-run resolve immediately.
   */
  async request(): Promise<void> {
    if (this.running) {
      this.pending = true;
      return;
    }
    this.running = true;
    try {
      do {
        this.pending = false;
        await this.run();
      } while (this.pending);
    } finally {
      this.running = false;
    }
  }
}
