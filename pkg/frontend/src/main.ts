/**
 * DOM glue: wires the canvas annotation surface, sliders, and panels to the
 * pure modules. All counting logic lives on the service; all rendering math
 * lives in the sibling modules, which is what the tests cover.
 */

import { ApiClient, ApiError, ServiceBusyError } from "./api.js";
import { renderHeatmap } from "./heatmap.js";
import { renderOverlay } from "./overlay.js";
import { decodeRle } from "./rle.js";
import type { DecodedMask } from "./rle.js";
import { boxFromCorners, buildCountRequest, canCount, describePrompt, pointFromClick } from "./prompts.js";
import { CountScheduler, createSession, exportSession, importSession, removePrompt } from "./session.js";
import { tensorFromBase64 } from "./tensor.js";
import type { CountMode } from "./types.js";

const DRAG_THRESHOLD_PX = 3;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("canvas");
const ctx = canvas.getContext("2d")!;
const imageInput = el<HTMLInputElement>("image-input");
const textInput = el<HTMLInputElement>("text-input");
const countButton = el<HTMLButtonElement>("count-button");
const countBadge = el<HTMLSpanElement>("count-badge");
const statusLine = el<HTMLSpanElement>("status-line");
const retryBanner = el<HTMLDivElement>("retry-banner");
const retryButton = el<HTMLButtonElement>("retry-button");
const retryDetail = el<HTMLSpanElement>("retry-detail");
const modeSelect = el<HTMLSelectElement>("mode-select");
const epsilonSlider = el<HTMLInputElement>("epsilon-slider");
const epsilonValue = el<HTMLSpanElement>("epsilon-value");
const gridSlider = el<HTMLInputElement>("grid-slider");
const gridValue = el<HTMLSpanElement>("grid-value");
const heatmapToggle = el<HTMLInputElement>("heatmap-toggle");
const promptList = el<HTMLUListElement>("prompt-list");
const statsPanel = el<HTMLDListElement>("stats-panel");
const exportButton = el<HTMLButtonElement>("export-button");
const importInput = el<HTMLInputElement>("import-input");

const api = new ApiClient();
let session = createSession();
let bitmap: ImageBitmap | null = null;
let drag: { x: number; y: number } | null = null;
let dragPreview: { x: number; y: number } | null = null;
const scheduler = new CountScheduler(doCount);

function setStatus(message: string): void {
  statusLine.textContent = message;
}

function toImageCoords(event: PointerEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * canvas.width,
    y: ((event.clientY - rect.top) / rect.height) * canvas.height,
  };
}

function paintRgba(pixels: Uint8ClampedArray<ArrayBuffer>, width: number, height: number): void {
  const layer = document.createElement("canvas");
  layer.width = width;
  layer.height = height;
  layer.getContext("2d")!.putImageData(new ImageData(pixels, width, height), 0, 0);
  ctx.imageSmoothingEnabled = width !== canvas.width;
  ctx.drawImage(layer, 0, 0, canvas.width, canvas.height);
  ctx.imageSmoothingEnabled = true;
}

function redraw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (bitmap) {
    ctx.drawImage(bitmap, 0, 0);
  } else {
    ctx.fillStyle = "#21262d";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
  }
  const result = session.lastResult;
  if (result && heatmapToggle.checked && result.similarity) {
    const tensor = tensorFromBase64(result.similarity);
    const [gridH, gridW] = tensor.shape as [number, number];
    paintRgba(renderHeatmap(tensor.data, gridW, gridH), gridW, gridH);
  }
  if (result) {
    const masks: DecodedMask[] = result.masks.map((m) => decodeRle(m.rle));
    if (masks.length > 0) {
      paintRgba(renderOverlay(masks, canvas.width, canvas.height), canvas.width, canvas.height);
    }
  }
  for (const prompt of session.prompts) {
    if (prompt.kind === "point") {
      ctx.beginPath();
      ctx.arc(prompt.x, prompt.y, 4, 0, Math.PI * 2);
      ctx.fillStyle = prompt.label === 1 ? "#2ea043" : "#f85149";
      ctx.fill();
      ctx.strokeStyle = "#ffffff";
      ctx.stroke();
    } else {
      ctx.strokeStyle = "#e3b341";
      ctx.setLineDash([5, 3]);
      ctx.strokeRect(prompt.x0, prompt.y0, prompt.x1 - prompt.x0, prompt.y1 - prompt.y0);
      ctx.setLineDash([]);
    }
  }
  if (drag && dragPreview) {
    ctx.strokeStyle = "#58a6ff";
    ctx.setLineDash([4, 2]);
    ctx.strokeRect(drag.x, drag.y, dragPreview.x - drag.x, dragPreview.y - drag.y);
    ctx.setLineDash([]);
  }
}

function renderPromptList(): void {
  promptList.replaceChildren(
    ...session.prompts.map((prompt, index) => {
      const item = document.createElement("li");
      const label = document.createElement("span");
      label.textContent = describePrompt(prompt);
      const remove = document.createElement("button");
      remove.textContent = "×";
      remove.title = "delete prompt";
      remove.addEventListener("click", () => {
        removePrompt(session, index);
        syncControls();
        redraw();
      });
      item.append(label, remove);
      return item;
    }),
  );
}

function renderStats(): void {
  const result = session.lastResult;
  if (!result) {
    statsPanel.replaceChildren();
    return;
  }
  const rows: [string, string][] = [
    ["decoder calls", String(result.stats.decoder_calls)],
    ["pruned by similarity", String(result.stats.points_pruned_by_similarity_prior)],
    ["pruned by segments", String(result.stats.points_pruned_by_segment_prior)],
    ["batches skipped", String(result.stats.batches_skipped)],
    ["wall time", `${result.stats.wall_time.toFixed(2)} s`],
    ["masks", String(result.masks.length)],
    ["mode", result.mode],
  ];
  statsPanel.replaceChildren(
    ...rows.flatMap(([term, value]) => {
      const dt = document.createElement("dt");
      dt.textContent = term;
      const dd = document.createElement("dd");
      dd.textContent = value;
      return [dt, dd];
    }),
  );
}

function syncControls(): void {
  const geometric = session.prompts.length > 0;
  textInput.disabled = geometric;
  textInput.title = geometric ? "text prompts cannot be combined with points/boxes" : "";
  countButton.disabled = session.sessionId === null || !canCount(session.prompts, session.text);
  epsilonValue.textContent = session.config.epsilon.toFixed(2);
  gridValue.textContent =
    session.config.points_per_side === null ? "auto" : String(session.config.points_per_side);
  renderPromptList();
}

async function doCount(): Promise<void> {
  if (session.sessionId === null) return;
  const body = buildCountRequest(
    session.sessionId,
    session.prompts,
    session.text,
    session.mode,
    session.config,
  );
  countButton.classList.add("working");
  setStatus("counting…");
  try {
    session.lastResult = await api.count(body);
    retryBanner.hidden = true;
    countBadge.hidden = false;
    countBadge.textContent = String(session.lastResult.count);
    setStatus(`counted ${session.lastResult.count}`);
  } catch (err) {
    if (err instanceof ServiceBusyError) {
      retryDetail.textContent = err.message;
      retryBanner.hidden = false;
      setStatus("service unavailable");
    } else if (err instanceof ApiError) {
      setStatus(`error ${err.status}: ${err.message}`);
    } else {
      setStatus(`request failed: ${(err as Error).message}`);
    }
  } finally {
    countButton.classList.remove("working");
    renderStats();
    redraw();
  }
}

imageInput.addEventListener("change", async () => {
  const file = imageInput.files?.[0];
  if (!file) return;
  try {
    const uploaded = await api.uploadImage(file, file.name);
    bitmap = await createImageBitmap(file);
    session = createSession();
    session.sessionId = uploaded.session_id;
    session.imageWidth = uploaded.width;
    session.imageHeight = uploaded.height;
    canvas.width = uploaded.width;
    canvas.height = uploaded.height;
    countBadge.hidden = true;
    setStatus(`session ${uploaded.session_id.slice(0, 8)} (${uploaded.width}×${uploaded.height})`);
  } catch (err) {
    setStatus(`upload failed: ${(err as Error).message}`);
  }
  syncControls();
  renderStats();
  redraw();
});

canvas.addEventListener("pointerdown", (event) => {
  if (session.sessionId === null) return;
  canvas.setPointerCapture(event.pointerId);
  drag = toImageCoords(event);
  dragPreview = null;
});

canvas.addEventListener("pointermove", (event) => {
  if (!drag) return;
  dragPreview = toImageCoords(event);
  redraw();
});

canvas.addEventListener("pointerup", (event) => {
  if (!drag) return;
  const start = drag;
  const end = toImageCoords(event);
  drag = null;
  dragPreview = null;
  const scale = canvas.getBoundingClientRect().width / canvas.width;
  const moved = Math.hypot(end.x - start.x, end.y - start.y) * scale;
  if (moved < DRAG_THRESHOLD_PX) {
    const point = pointFromClick(end.x, end.y, canvas.width, canvas.height, event.shiftKey);
    if (point) session.prompts.push(point);
  } else {
    const box = boxFromCorners(start.x, start.y, end.x, end.y, canvas.width, canvas.height);
    if (box) {
      session.prompts.push(box);
    } else {
      setStatus("zero-area box rejected");
    }
  }
  syncControls();
  redraw();
});

textInput.addEventListener("input", () => {
  session.text = textInput.value;
  syncControls();
});

modeSelect.addEventListener("change", () => {
  session.mode = modeSelect.value as CountMode;
});

epsilonSlider.addEventListener("input", () => {
  session.config.epsilon = Number(epsilonSlider.value);
  syncControls();
});

gridSlider.addEventListener("input", () => {
  const raw = Number(gridSlider.value);
  session.config.points_per_side = raw === 0 ? null : raw;
  syncControls();
});

heatmapToggle.addEventListener("change", redraw);

countButton.addEventListener("click", () => void scheduler.request());
retryButton.addEventListener("click", () => {
  retryBanner.hidden = true;
  void scheduler.request();
});

exportButton.addEventListener("click", () => {
  const blob = new Blob([exportSession(session)], { type: "application/json" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "promptcount-session.json";
  link.click();
  URL.revokeObjectURL(link.href);
});

importInput.addEventListener("change", async () => {
  const file = importInput.files?.[0];
  if (!file) return;
  try {
    const imported = importSession(await file.text());
    // The bitmap cannot leave the server, so keep the current image (and its
    // session id) when one is loaded; prompts and config restore exactly.
    if (bitmap && session.sessionId !== null) {
      imported.sessionId = session.sessionId;
      imported.imageWidth = session.imageWidth;
      imported.imageHeight = session.imageHeight;
    } else if (imported.imageWidth > 0 && imported.imageHeight > 0) {
      canvas.width = imported.imageWidth;
      canvas.height = imported.imageHeight;
    }
    session = imported;
    textInput.value = session.text;
    modeSelect.value = session.mode;
    epsilonSlider.value = String(session.config.epsilon);
    gridSlider.value = String(session.config.points_per_side ?? 0);
    setStatus("session imported");
  } catch (err) {
    setStatus((err as Error).message);
  }
  importInput.value = "";
  syncControls();
  renderStats();
  redraw();
});

void api
  .health()
  .then((health) => setStatus(`service ok · stride ${String(health.capabilities["feature_stride"])}`))
  .catch((err) => setStatus(`service unreachable: ${(err as Error).message}`));

syncControls();
redraw();
