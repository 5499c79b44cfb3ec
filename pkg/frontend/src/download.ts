/* Export download: fetch the raw probability grid and its meta sidecar and
 * save both under deterministic names. The saved bytes are exactly the API
 * payload — no reshaping, no reencoding.
 */
import { Api, PredictResult } from "./api.js";

export type SaveFn = (blob: Blob, filename: string) => void;

export function exportFilename(modelId: string, jobId: string): string {
  return `${modelId}_${jobId}.bin`;
}

export function sidecarFilename(modelId: string, jobId: string): string {
  return `${modelId}_${jobId}.json`;
}

/* Browser save via a transient object-URL anchor. */
export function saveBlob(blob: Blob, filename: string): void {
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  document.body.appendChild(a);
  a.click();
  a.remove();
  URL.revokeObjectURL(url);
}

export async function downloadResult(
  api: Api,
  result: PredictResult,
  save: SaveFn = saveBlob,
): Promise<void> {
  const bytes = await api.exportProbs(result.export.probabilities);
  const meta = await api.exportMeta(result.export.meta);
  save(
    new Blob([bytes], { type: "application/octet-stream" }),
    exportFilename(result.model_id, result.job_id),
  );
  save(
    new Blob([JSON.stringify(meta)], { type: "application/json" }),
    sidecarFilename(result.model_id, result.job_id),
  );
}
