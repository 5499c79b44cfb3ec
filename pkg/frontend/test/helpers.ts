/* Mock fetch plumbing and canned API payloads for the contract tests. */
import { vi } from "vitest";
import { ModelInfo, PredictResult } from "../src/api.js";

// 1x1 transparent PNG; any valid base64 works since the UI never decodes it.
export const TINY_PNG =
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNk" +
  "YPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";

export const MODELS: ModelInfo[] = [
  {
    id: "deeplab_lite",
    name: "deeplab-lite",
    description: "Compact DeepLab with atrous spatial pyramid pooling.",
    architecture: "deeplab-lite",
    f1: 0.1001,
  },
  {
    id: "unet_dense",
    name: "unet-dense",
    description: "U-Net with dense encoder blocks.",
    architecture: "unet-dense",
    f1: 0.1395,
  },
  {
    id: "unet_plain",
    name: "unet-plain",
    description: "Plain U-Net encoder-decoder with skip connections.",
    architecture: "unet-plain",
    f1: 0.0487,
  },
];

export function result(modelId: string, jobId = "abc123def4567890"): PredictResult {
  return {
    job_id: jobId,
    model_id: modelId,
    landslide_fraction: 0.128906,
    threshold: 0.5,
    rgb_png: TINY_PNG,
    mask_png: TINY_PNG,
    overlay_png: TINY_PNG,
    export: {
      probabilities: `/api/export/${jobId}/${modelId}`,
      meta: `/api/export/${jobId}/${modelId}/meta`,
    },
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export function bytesResponse(bytes: Uint8Array, status = 200): Response {
  return new Response(bytes.slice().buffer, {
    status,
    headers: { "content-type": "application/octet-stream" },
  });
}

export type Route = (url: string, init?: RequestInit) => Response | undefined;

/* Install a fetch mock that answers from an ordered route list and records
 * every call; unmatched URLs return a JSON 404. */
export function mockFetch(...routes: Route[]) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fn = vi.fn(async (input: unknown, init?: RequestInit) => {
    const url = String(input);
    calls.push({ url, init });
    for (const route of routes) {
      const resp = route(url, init);
      if (resp) return resp;
    }
    return jsonResponse({ error: "unknown_route", detail: url }, 404);
  });
  vi.stubGlobal("fetch", fn);
  return { fn, calls };
}

export function onGet(path: string, make: () => Response): Route {
  return (url, init) =>
    (!init || !init.method || init.method === "GET") && url === path
      ? make()
      : undefined;
}

export function onPost(path: string, make: (init?: RequestInit) => Response): Route {
  return (url, init) =>
    init?.method === "POST" && url === path ? make(init) : undefined;
}

export async function flush(): Promise<void> {
  // Settle chained promises from fire-and-forget handlers.
  for (let i = 0; i < 10; i++) await Promise.resolve();
}
