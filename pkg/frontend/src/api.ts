/* Typed client for the landseg HTTP API.
 *
 * Every method maps onto one endpoint and returns the parsed body untouched:
 * the UI never recomputes numbers the service already reports. Non-2xx
 * responses become ApiError carrying the machine code from the JSON body.
 */

export interface ModelInfo {
  id: string;
  name: string;
  description: string;
  architecture: string;
  f1: number | null;
}

export interface ExportRefs {
  probabilities: string;
  meta: string;
}

export interface PredictResult {
  job_id: string;
  model_id: string;
  landslide_fraction: number;
  threshold: number;
  rgb_png: string;
  mask_png: string;
  overlay_png: string;
  export: ExportRefs;
}

export interface PredictEntryError {
  model_id: string;
  error: string;
}

export type PredictAllEntry = PredictResult | PredictEntryError;

export function isEntryError(e: PredictAllEntry): e is PredictEntryError {
  return "error" in e;
}

export interface ExportMeta {
  shape: [number, number];
  dtype: string;
  threshold: number;
  model: string;
}

export class ApiError extends Error {
  status: number;
  code: string;
  detail?: string;

  constructor(status: number, code: string, detail?: string) {
    super(detail ? `${code}: ${detail}` : code);
    this.status = status;
    this.code = code;
    this.detail = detail;
  }
}

async function raise(resp: Response): Promise<never> {
  let code = `http_${resp.status}`;
  let detail: string | undefined;
  try {
    const body = await resp.json();
    if (body && typeof body.error === "string") code = body.error;
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body; keep the status code */
  }
  throw new ApiError(resp.status, code, detail);
}

export class Api {
  base: string;

  constructor(base = "") {
    this.base = base.replace(/\/$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  private form(file: Blob, filename: string, threshold?: number): FormData {
    const fd = new FormData();
    fd.append("file", file, filename);
    if (threshold !== undefined) fd.append("threshold", String(threshold));
    return fd;
  }

  async models(): Promise<ModelInfo[]> {
    return this.getJson("/api/models");
  }

  async predict(
    file: Blob,
    filename: string,
    modelId: string,
    threshold?: number,
  ): Promise<PredictResult> {
    const fd = this.form(file, filename, threshold);
    fd.append("model_id", modelId);
    const resp = await fetch(this.base + "/api/predict", {
      method: "POST",
      body: fd,
    });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async predictAll(
    file: Blob,
    filename: string,
    threshold?: number,
  ): Promise<PredictAllEntry[]> {
    const resp = await fetch(this.base + "/api/predict-all", {
      method: "POST",
      body: this.form(file, filename, threshold),
    });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  /* Raw little-endian float32 probability grid for a finished job. */
  async exportProbs(ref: string): Promise<ArrayBuffer> {
    const resp = await fetch(this.base + ref);
    if (!resp.ok) await raise(resp);
    return resp.arrayBuffer();
  }

  async exportMeta(ref: string): Promise<ExportMeta> {
    return this.getJson(ref);
  }
}
