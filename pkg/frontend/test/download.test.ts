import { afterEach, describe, expect, it, vi } from "vitest";
import { Api, ApiError } from "../src/api.js";
import {
  downloadResult,
  exportFilename,
  sidecarFilename,
} from "../src/download.js";
import {
  bytesResponse,
  jsonResponse,
  mockFetch,
  onGet,
  result,
} from "./helpers.js";

afterEach(() => vi.unstubAllGlobals());

// 8x8 float32 grid -> 256 bytes, deliberately non-trivial byte content.
function probPayload(): Uint8Array {
  const bytes = new Uint8Array(8 * 8 * 4);
  for (let i = 0; i < bytes.length; i++) bytes[i] = (i * 37 + 11) % 256;
  return bytes;
}

const META = { shape: [8, 8], dtype: "f32le", threshold: 0.5, model: "unet_plain" };

describe("filenames", () => {
  it("follow the {model_id}_{job_id} pattern", () => {
    expect(exportFilename("unet_plain", "abc123def4567890")).toBe(
      "unet_plain_abc123def4567890.bin",
    );
    expect(sidecarFilename("unet_plain", "abc123def4567890")).toBe(
      "unet_plain_abc123def4567890.json",
    );
  });
});

describe("downloadResult", () => {
  it("saves bytes identical to the API payload, H*W*4 of them", async () => {
    const payload = probPayload();
    const r = result("unet_plain");
    mockFetch(
      onGet(r.export.probabilities, () => bytesResponse(payload)),
      onGet(r.export.meta, () => jsonResponse(META)),
    );

    const saved: { name: string; bytes: Uint8Array }[] = [];
    await downloadResult(new Api(), r, (blob, name) => {
      void blob.arrayBuffer().then((buf) => {
        saved.push({ name, bytes: new Uint8Array(buf) });
      });
    });
    await new Promise((resolve) => setTimeout(resolve, 0));

    expect(saved).toHaveLength(2);
    const bin = saved.find((s) => s.name.endsWith(".bin"))!;
    expect(bin.name).toBe("unet_plain_abc123def4567890.bin");
    expect(bin.bytes.length).toBe(META.shape[0] * META.shape[1] * 4);
    expect([...bin.bytes]).toEqual([...payload]);

    const sidecar = saved.find((s) => s.name.endsWith(".json"))!;
    expect(JSON.parse(new TextDecoder().decode(sidecar.bytes))).toEqual(META);
  });

  it("raises on an expired job and saves nothing", async () => {
    const r = result("unet_plain");
    mockFetch(
      onGet(r.export.probabilities, () =>
        jsonResponse({ error: "unknown_job" }, 404),
      ),
    );
    const save = vi.fn();
    const err = await downloadResult(new Api(), r, save).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    expect(save).not.toHaveBeenCalled();
  });
});
