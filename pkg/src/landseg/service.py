"""HTTP prediction service.

A stateless JSON API over the model registry: list models, predict with one
or all of them, download raw probability payloads. Uploads are the same HDF5
patches the training pipeline reads. Job artifacts are held in memory and
swept after a TTL; job ids are content-addressed (hash of upload bytes plus
the requested threshold) so a repeated upload maps to the same job.

All-models runs assemble each channel configuration once per upload and
reuse it across checkpoints sharing that configuration.
"""
import base64
import hashlib
import threading
import time

import numpy as np
from fastapi import FastAPI, File, Form, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from .data import DataError, assemble_channels, load_patch_bytes, normalize
from .models import predict_mask
from .overlay import (
    DEFAULT_DISPLAY_BANDS,
    mask_image,
    render_overlay,
    rgb_composite,
    to_png_bytes,
)
from .registry import ModelRegistry
from .schemas import ExportRefs, ModelInfo, PredictEntryError, PredictResult
from .tensor import Tensor

DEFAULT_MAX_UPLOAD = 64 * 1024 * 1024
DEFAULT_JOB_TTL = 3600.0


def run_prediction(model, channels, stats, sample, threshold: float):
    """One forward pass; returns probs (H×W float32), mask (H×W uint8),
    and the landslide fraction. The CLI calls this same function, so batch
    and HTTP outputs are bitwise-identical."""
    x = assemble_channels(sample, channels)
    if stats is not None:
        x = normalize(x, stats)
    probs = model.forward(Tensor(x.data[None]))
    probs2d = probs.data[0, 0].astype(np.float32)
    mask = predict_mask(probs, threshold).data[0, 0].astype(np.uint8)
    return probs2d, mask, float(mask.mean())


def _job_id(blob: bytes, threshold) -> str:
    h = hashlib.sha256()
    h.update(blob)
    h.update(repr(threshold).encode("ascii"))
    return h.hexdigest()[:16]


class JobStore:
    """In-memory (job, model) -> payload map with TTL eviction."""

    def __init__(self, ttl: float = DEFAULT_JOB_TTL, clock=time.monotonic):
        self.ttl = ttl
        self.clock = clock
        self._items = {}
        self._lock = threading.Lock()

    def put(self, job_id: str, model_id: str, payload: dict) -> None:
        with self._lock:
            self._sweep()
            self._items[(job_id, model_id)] = (self.clock(), payload)

    def get(self, job_id: str, model_id: str):
        with self._lock:
            self._sweep()
            hit = self._items.get((job_id, model_id))
            return hit[1] if hit else None

    def _sweep(self) -> None:
        now = self.clock()
        dead = [k for k, (t, _) in self._items.items() if now - t > self.ttl]
        for k in dead:
            del self._items[k]


def create_app(registry: ModelRegistry, *,
               max_upload_bytes: int = DEFAULT_MAX_UPLOAD,
               job_ttl: float = DEFAULT_JOB_TTL,
               clock=time.monotonic,
               display_bands=DEFAULT_DISPLAY_BANDS,
               static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="landseg", docs_url="/api/docs", openapi_url="/api/openapi.json")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    jobs = JobStore(ttl=job_ttl, clock=clock)
    app.state.registry = registry
    app.state.jobs = jobs

    def _error(status: int, code: str, detail: str = None) -> JSONResponse:
        body = {"error": code}
        if detail:
            body["detail"] = detail
        return JSONResponse(status_code=status, content=body)

    async def _read_upload(file: UploadFile):
        blob = await file.read()
        if len(blob) > max_upload_bytes:
            return None, _error(
                413, "upload_too_large",
                f"{len(blob)} bytes exceeds the {max_upload_bytes} byte limit",
            )
        return blob, None

    def _ingest(blob: bytes, filename: str):
        name = (filename or "upload").rsplit("/", 1)[-1]
        if name.endswith(".h5"):
            name = name[:-3]
        try:
            return load_patch_bytes(blob, name=name), None
        except DataError as e:
            return None, _error(422, "invalid_patch", str(e))

    def _predict_one(entry, sample, blob, threshold, assembled):
        model, channels, stats = registry.get_model(entry.id)
        t = model.spec.threshold if threshold is None else threshold
        key = tuple(channels.channels)
        if key not in assembled:
            assembled[key] = assemble_channels(sample, channels)
        x = assembled[key]
        if stats is not None:
            x = normalize(x, stats)
        probs = model.forward(Tensor(x.data[None]))
        probs2d = probs.data[0, 0].astype(np.float32)
        mask = predict_mask(probs, t).data[0, 0].astype(np.uint8)

        job_id = _job_id(blob, threshold)
        jobs.put(job_id, entry.id, {
            "probs": probs2d, "threshold": t, "shape": list(probs2d.shape),
        })
        rgb = rgb_composite(sample.img, display_bands)
        result = PredictResult(
            job_id=job_id,
            model_id=entry.id,
            landslide_fraction=float(mask.mean()),
            threshold=t,
            rgb_png=base64.b64encode(to_png_bytes(rgb)).decode("ascii"),
            mask_png=base64.b64encode(
                to_png_bytes(mask_image(mask))).decode("ascii"),
            overlay_png=base64.b64encode(
                to_png_bytes(render_overlay(rgb, mask))).decode("ascii"),
            export=ExportRefs(
                probabilities=f"/api/export/{job_id}/{entry.id}",
                meta=f"/api/export/{job_id}/{entry.id}/meta",
            ),
        )
        return result

    @app.get("/api/models", response_model=list[ModelInfo])
    def list_models():
        return [ModelInfo(**e.public_fields()) for e in registry.entries()]

    @app.post("/api/predict")
    async def predict(file: UploadFile = File(...),
                      model_id: str = Form(...),
                      threshold: float = Form(None)):
        if threshold is not None and not (0.0 <= threshold <= 1.0):
            return _error(422, "invalid_threshold",
                          f"threshold must lie in [0, 1], got {threshold}")
        try:
            entry = registry.get_entry(model_id)
        except KeyError:
            return _error(404, "unknown_model")
        blob, err = await _read_upload(file)
        if err:
            return err
        sample, err = _ingest(blob, file.filename)
        if err:
            return err
        return _predict_one(entry, sample, blob, threshold, {})

    @app.post("/api/predict-all")
    async def predict_all(file: UploadFile = File(...),
                          threshold: float = Form(None)):
        if threshold is not None and not (0.0 <= threshold <= 1.0):
            return _error(422, "invalid_threshold",
                          f"threshold must lie in [0, 1], got {threshold}")
        blob, err = await _read_upload(file)
        if err:
            return err
        sample, err = _ingest(blob, file.filename)
        if err:
            return err
        assembled = {}
        out = []
        for entry in registry.entries():
            try:
                out.append(_predict_one(entry, sample, blob, threshold,
                                        assembled))
            except Exception as e:  # noqa: BLE001 - partial failures stay per-entry
                out.append(PredictEntryError(model_id=entry.id, error=str(e)))
        return out

    @app.get("/api/export/{job_id}/{model_id}")
    def export_payload(job_id: str, model_id: str):
        hit = jobs.get(job_id, model_id)
        if hit is None:
            return _error(404, "unknown_job")
        raw = np.ascontiguousarray(hit["probs"].astype("<f4")).tobytes()
        return Response(content=raw, media_type="application/octet-stream")

    @app.get("/api/export/{job_id}/{model_id}/meta")
    def export_meta(job_id: str, model_id: str):
        hit = jobs.get(job_id, model_id)
        if hit is None:
            return _error(404, "unknown_job")
        return {
            "shape": hit["shape"],
            "dtype": "f32le",
            "threshold": hit["threshold"],
            "model": model_id,
        }

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="webui")

    return app
