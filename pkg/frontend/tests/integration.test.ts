/**
 * End-to-end UI loop against a live counting service: upload an image,
 * build a box prompt the way a canvas drag does, count, and render —
 * all within the interactive latency budget — plus the score-threshold
 * monotonicity and the typed error surfaces.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError, ServiceBusyError } from "../dist/api.js";
import { boxFromCorners, buildCountRequest, canCount } from "../dist/prompts.js";
import { renderHeatmap } from "../dist/heatmap.js";
import { renderOverlay } from "../dist/overlay.js";
import { decodeRle } from "../dist/rle.js";
import { createSession } from "../dist/session.js";
import { tensorFromBase64 } from "../dist/tensor.js";
import type { BoxPrompt } from "../dist/types.js";
import { DEFAULT_CONFIG } from "../dist/types.js";

const DIST_DIR = join(dirname(fileURLToPath(import.meta.url)), "..", "dist");
const LATENCY_BUDGET_MS = 5_000;

// Renders a deterministic scene set and prints the drive facts as JSON.
const MAKE_SCENES = `
import json
import numpy as np
from promptcount.core import save_image
from promptcount.synthetic import exemplar_boxes, random_scene, render_scene, save_scenes

rng = np.random.default_rng(42)
scenes = [
    random_scene(rng, n_targets=n, n_distractors=d, radius_range=(9, 14),
                 class_names={"gear": 1, "blot": 2}, name=f"drive-{i}")
    for i, (n, d) in enumerate([(7, 2), (4, 1), (9, 3)])
]
save_scenes(scenes, "scenes.json")
image = render_scene(scenes[0])
save_image("scene0.png", image)
box = exemplar_boxes(scenes[0], 1, k=1)[0]
print(json.dumps({
    "box": [box.x0, box.y0, box.x1, box.y1],
    "gt": scenes[0].count_of_class(1),
    "height": image.shape[0],
    "width": image.shape[1],
}))
`;

interface DriveFacts {
  box: [number, number, number, number];
  gt: number;
  width: number;
  height: number;
}

// Minimal wire backend the 503 test can kill out from under its service.
const WIRE_BACKEND = `
import sys
import uvicorn
from promptcount.synthetic import SyntheticBackend, load_scenes
from promptcount.wire import create_backend_app

backend = SyntheticBackend(list(load_scenes("scenes.json")))
uvicorn.run(create_backend_app(backend), host="127.0.0.1", port=int(sys.argv[1]),
            log_level="warning")
`;

let workDir: string;
let facts: DriveFacts;
let server: ChildProcess;
let wireBackend: ChildProcess;
let chainedServer: ChildProcess;
let baseUrl: string;
let chainedUrl: string;
const serverLogs = new Map<ChildProcess, string[]>();

function spawnLogged(command: string, args: string[], cwd: string): ChildProcess {
  const child = spawn(command, args, {
    cwd,
    stdio: ["ignore", "ignore", "pipe"],
  });
  const log: string[] = [];
  serverLogs.set(child, log);
  child.stderr!.on("data", (chunk: Buffer) => log.push(chunk.toString()));
  child.on("error", (err) => log.push(`spawn error: ${err.message}`));
  return child;
}

async function waitForReady(url: string, path: string, child: ChildProcess): Promise<void> {
  const deadline = Date.now() + 90_000;
  let lastError = "no response";
  while (Date.now() < deadline) {
    try {
      const res = await fetch(url + path);
      if (res.ok) return;
      lastError = `status ${res.status}`;
    } catch (err) {
      lastError = (err as Error).message;
    }
    await new Promise((r) => setTimeout(r, 300));
  }
  const log = (serverLogs.get(child) ?? []).join("");
  throw new Error(`service at ${url} not ready: ${lastError}\nserver log:\n${log}`);
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "ui-drive-"));
  const made = spawnSync("python3", ["-c", MAKE_SCENES], {
    cwd: workDir,
    encoding: "utf8",
  });
  if (made.status !== 0) {
    throw new Error(`scene generation failed: ${made.stderr}`);
  }
  facts = JSON.parse(made.stdout.trim().split("\n").at(-1)!) as DriveFacts;

  const port = 8900 + (process.pid % 30) * 3;
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawnLogged(
    "promptcount",
    [
      "serve",
      "--backend",
      `synthetic:${join(workDir, "scenes.json")}`,
      "--port",
      String(port),
      "--ui",
      DIST_DIR,
    ],
    workDir,
  );

  // A second service chained to a separate wire backend process; the 503
  // test kills the backend out from under it.
  const wirePort = port + 1;
  const chainedPort = port + 2;
  chainedUrl = `http://127.0.0.1:${chainedPort}`;
  wireBackend = spawnLogged("python3", ["-c", WIRE_BACKEND, String(wirePort)], workDir);
  await waitForReady(`http://127.0.0.1:${wirePort}`, "/v1/capabilities", wireBackend);
  chainedServer = spawnLogged(
    "promptcount",
    [
      "serve",
      "--backend",
      `http://127.0.0.1:${wirePort}`,
      "--port",
      String(chainedPort),
    ],
    workDir,
  );

  await waitForReady(baseUrl, "/api/health", server);
  await waitForReady(chainedUrl, "/api/health", chainedServer);
});

afterAll(() => {
  server?.kill();
  chainedServer?.kill();
  wireBackend?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe("served static bundle", () => {
  it("serves the annotation page and its module entry point", async () => {
    const page = await fetch(`${baseUrl}/`);
    expect(page.status).toBe(200);
    const html = await page.text();
    expect(html).toContain('<canvas id="canvas"');
    expect(html).toContain('src="./main.js"');
    const script = await fetch(`${baseUrl}/main.js`);
    expect(script.status).toBe(200);
    expect(await script.text()).toContain("pointerup");
  });
});

describe("upload, drag, count, render", () => {
  it("completes the loop within the latency budget and renders every mask", async () => {
    const api = new ApiClient(baseUrl);
    const png = readFileSync(join(workDir, "scene0.png"));
    const started = performance.now();

    const uploaded = await api.uploadImage(new Blob([png], { type: "image/png" }));
    const session = createSession();
    session.sessionId = uploaded.session_id;
    session.imageWidth = uploaded.width;
    session.imageHeight = uploaded.height;
    expect(uploaded.width).toBe(facts.width);
    expect(uploaded.height).toBe(facts.height);

    // A drag from just inside the exemplar's corners reconstructs the exact
    // half-open box the oracle annotated.
    const [x0, y0, x1, y1] = facts.box;
    const dragged = boxFromCorners(
      x0 + 0.5,
      y0 + 0.5,
      x1 - 0.5,
      y1 - 0.5,
      uploaded.width,
      uploaded.height,
    );
    expect(dragged).toEqual({ kind: "box", x0, y0, x1, y1 });
    session.prompts.push(dragged as BoxPrompt);
    expect(canCount(session.prompts, session.text)).toBe(true);

    const result = await api.count(
      buildCountRequest(
        session.sessionId,
        session.prompts,
        session.text,
        session.mode,
        session.config,
      ),
    );
    expect(result.count).toBe(facts.gt);
    expect(result.masks).toHaveLength(result.count);

    // Client-side rendering: decode every RLE losslessly, composite the
    // overlay, and rasterize the similarity heatmap from the base64 tensor.
    const masks = result.masks.map((m) => decodeRle(m.rle));
    for (const mask of masks) {
      expect(mask.width).toBe(uploaded.width);
      expect(mask.height).toBe(uploaded.height);
    }
    const overlay = renderOverlay(masks, uploaded.width, uploaded.height);
    expect(result.similarity).not.toBeNull();
    const tensor = tensorFromBase64(result.similarity!);
    expect(tensor.shape).toHaveLength(2);
    const [gridH, gridW] = tensor.shape as [number, number];
    const heat = renderHeatmap(tensor.data, gridW, gridH);
    expect(heat.length).toBe(gridW * gridH * 4);

    const elapsed = performance.now() - started;
    expect(elapsed).toBeLessThan(LATENCY_BUDGET_MS);

    // No-stale-overlay invariant at the pixel level: painted iff covered.
    let painted = 0;
    for (let i = 0; i < uploaded.width * uploaded.height; i++) {
      const isPainted = overlay[i * 4 + 3]! > 0;
      if (isPainted) painted += 1;
      const covered = masks.some((m) => m.data[i] === 1);
      if (isPainted !== covered) {
        throw new Error(`overlay pixel ${i} painted=${String(isPainted)} covered=${String(covered)}`);
      }
    }
    expect(painted).toBeGreaterThan(0);

    expect(result.stats.decoder_calls).toBeGreaterThan(0);
  });

  it("never increases the vanilla count as the score threshold rises", async () => {
    const api = new ApiClient(baseUrl);
    const png = readFileSync(join(workDir, "scene0.png"));
    const uploaded = await api.uploadImage(new Blob([png], { type: "image/png" }));
    const [x0, y0, x1, y1] = facts.box;
    const box: BoxPrompt = { kind: "box", x0, y0, x1, y1 };

    const counts: number[] = [];
    for (const epsilon of [0.0, 0.25, 0.5, 0.75, 0.95]) {
      const result = await api.count(
        buildCountRequest(uploaded.session_id, [box], "", "vanilla", {
          ...DEFAULT_CONFIG,
          epsilon,
        }),
      );
      counts.push(result.count);
    }
    for (let i = 1; i < counts.length; i++) {
      expect(counts[i]!).toBeLessThanOrEqual(counts[i - 1]!);
    }
  });
});

describe("error surfaces", () => {
  it("reports unknown sessions as 404 ApiErrors", async () => {
    const api = new ApiClient(baseUrl);
    const body = buildCountRequest("nope", [], "gear", "prior", DEFAULT_CONFIG);
    const failure = await api.count(body).catch((err: unknown) => err);
    expect(failure).toBeInstanceOf(ApiError);
    expect((failure as ApiError).status).toBe(404);
    expect((failure as ApiError).message).toContain("nope");
  });

  it("reports a lost backend as the retryable 503 error on count", async () => {
    const api = new ApiClient(chainedUrl);
    expect((await api.health()).status).toBe("ok");
    const png = readFileSync(join(workDir, "scene0.png"));
    const uploaded = await api.uploadImage(new Blob([png], { type: "image/png" }));

    const exited = new Promise<void>((resolve) => wireBackend.once("exit", () => resolve()));
    wireBackend.kill();
    await exited;

    const body = buildCountRequest(
      uploaded.session_id,
      [{ kind: "box", x0: 1, y0: 1, x1: 20, y1: 20 }],
      "",
      "prior",
      DEFAULT_CONFIG,
    );
    const failure = await api.count(body).catch((err: unknown) => err);
    expect(failure).toBeInstanceOf(ServiceBusyError);
    expect((failure as ServiceBusyError).status).toBe(503);
  });
});
