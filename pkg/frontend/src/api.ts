// Thin HTTP client for the /v1 service endpoints. The console holds no
// model logic; everything goes through these calls.

import type { CaseValues, SchemaDocument, ScreenResponse, ServiceError } from "./types";

export interface RuntimeConfig {
  service_url: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
    readonly fields: { field: string; code: string; bound?: string }[] = [],
  ) {
    super(`${status} ${code}: ${detail}`);
  }

  get retryable(): boolean {
    return this.status === 503 || this.status >= 500;
  }
}

async function raiseFor(response: Response): Promise<never> {
  let code = "error";
  let detail = response.statusText;
  let fields: { field: string; code: string; bound?: string }[] = [];
  try {
    const body = (await response.json()) as ServiceError;
    code = body.error?.code ?? code;
    detail = body.error?.detail ?? detail;
    fields = body.error?.fields ?? [];
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, code, detail, fields);
}

export class ServiceClient {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async schema(): Promise<SchemaDocument> {
    const response = await fetch(this.url("/v1/schema"));
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as SchemaDocument;
  }

  async screen(body: CaseValues & { k?: number }): Promise<ScreenResponse> {
    const response = await fetch(this.url("/v1/screen"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) await raiseFor(response);
    return (await response.json()) as ScreenResponse;
  }

  async health(): Promise<{ status: string; index_size: number }> {
    const response = await fetch(this.url("/healthz"));
    if (!response.ok) await raiseFor(response);
    return await response.json();
  }
}

/** Service origin: ./config.json if present, else same origin. */
export async function loadRuntimeConfig(): Promise<RuntimeConfig> {
  try {
    const response = await fetch("./config.json");
    if (response.ok) {
      const doc = await response.json();
      if (typeof doc.service_url === "string") {
        return { service_url: doc.service_url };
      }
    }
  } catch {
    // fall through to same-origin default
  }
  return { service_url: "" };
}
