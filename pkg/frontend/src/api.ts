/**
 * HTTP client for the counting service. The UI talks only to /api/* paths;
 * everything else it needs is computed client-side.
 */

import type { CountRequestBody } from "./prompts.js";
import type { CountResponse, HealthResponse, UploadResponse } from "./types.js";

/** A non-2xx service response, carrying the HTTP status and detail text. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

/** 503 from the service (backend unreachable / busy): show the retry banner. */
export class ServiceBusyError extends ApiError {
  constructor(detail: string) {
    super(503, detail);
    this.name = "ServiceBusyError";
  }
}

async function raiseForStatus(res: Response): Promise<void> {
  if (res.ok) return;
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = (await res.json()) as { detail?: string };
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  if (res.status === 503) throw new ServiceBusyError(detail);
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  /** baseUrl is empty when the bundle is served by the service itself. */
  constructor(private readonly baseUrl = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    await raiseForStatus(res);
    return (await res.json()) as T;
  }

  async health(): Promise<HealthResponse> {
    return this.getJson<HealthResponse>("/api/health");
  }

  /** Upload an image; the service replies with a session id and pixel size. */
  async uploadImage(file: Blob, filename = "image.png"): Promise<UploadResponse> {
    const form = new FormData();
    form.append("file", file, filename);
    const res = await fetch(this.baseUrl + "/api/images", { method: "POST", body: form });
    await raiseForStatus(res);
    return (await res.json()) as UploadResponse;
  }

  async count(body: CountRequestBody): Promise<CountResponse> {
    const res = await fetch(this.baseUrl + "/api/count", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    await raiseForStatus(res);
    return (await res.json()) as CountResponse;
  }

  async sessionSummary(sessionId: string): Promise<Record<string, unknown>> {
    return this.getJson<Record<string, unknown>>(
      `/api/sessions/${encodeURIComponent(sessionId)}`,
    );
  }
}
