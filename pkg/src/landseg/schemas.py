"""Request/response models for the HTTP service."""
from pydantic import BaseModel, Field


class ModelInfo(BaseModel):
    """Public view of one registry entry."""

    id: str
    name: str
    description: str
    architecture: str
    f1: float | None = None


class ExportRefs(BaseModel):
    """Where the raw probability payload for one prediction lives."""

    probabilities: str
    meta: str


class PredictResult(BaseModel):
    job_id: str
    model_id: str
    landslide_fraction: float = Field(ge=0.0, le=1.0)
    threshold: float = Field(ge=0.0, le=1.0)
    rgb_png: str
    mask_png: str
    overlay_png: str
    export: ExportRefs


class PredictEntryError(BaseModel):
    """Per-model failure inside an all-models run."""

    model_id: str
    error: str


class ErrorBody(BaseModel):
    error: str
    detail: str | None = None
