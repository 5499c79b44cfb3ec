"""Patch ingestion and preparation.

Input files are HDF5 containers holding a dataset "img" of shape H×W×14
(floating point, Landslide4Sense band order) and optionally "mask" of shape
H×W with integer values 0/1. The real corpus uses H = W = 128; any-size mode
accepts other extents when they are divisible by the model's 2^depth.

Band semantics (1-based): 1-12 Sentinel-2 B1-B12 (B2 blue, B3 green, B4 red,
B8 NIR), 13 DEM, 14 slope. The mapping is config-visible so alternate layer
orders can be expressed without code changes.
"""
from __future__ import annotations

import io
import json
import os
import warnings
from dataclasses import dataclass, field

import h5py
import numpy as np

from .tensor import Rng, Tensor

NDVI_EPS = 1e-8
N_SOURCE_BANDS = 14
PATCH_SIZE = 128
REAL_SPLIT_COUNTS = {"train": 3799, "validation": 245, "test": 800}


class DataError(Exception):
    """Base class for ingestion problems."""


class UnreadableFileError(DataError):
    """File missing or not an HDF5 container."""


class MissingKeyError(DataError):
    """Expected dataset key absent from the container."""


class RankError(DataError):
    """Dataset has the wrong number of dimensions."""


class ChannelCountError(DataError):
    """Image does not carry the 14 source bands."""


class SizeError(DataError):
    """Spatial extents violate the active size rule."""


class InvalidMaskError(DataError):
    """Mask contains values outside {0, 1}."""


@dataclass
class PatchSample:
    """One patch: H×W×C image, optional binary mask, provenance tag."""

    id: str
    img: np.ndarray
    mask: np.ndarray | None = None
    provenance: str = "real"
    cleaned: int = 0  # NaN/Inf pixels zeroed during ingestion

    @property
    def size(self) -> tuple:
        return self.img.shape[:2]


def _read_datasets(f, label: str, image_key: str, mask_key,
                   strict_size: bool, divisible_by):
    """Validate one open HDF5 container; returns (img, mask)."""
    if image_key not in f:
        raise MissingKeyError(
            f"{label}: missing dataset key {image_key!r} "
            f"(found: {sorted(f.keys())})"
        )
    img = np.asarray(f[image_key], dtype=np.float32)
    if img.ndim != 3:
        raise RankError(f"{label}: image must be H×W×C, got rank {img.ndim}")
    if img.shape[2] != N_SOURCE_BANDS:
        raise ChannelCountError(
            f"{label}: expected {N_SOURCE_BANDS} bands, got {img.shape[2]}"
        )
    h, w = img.shape[:2]
    if strict_size:
        if (h, w) != (PATCH_SIZE, PATCH_SIZE):
            raise SizeError(
                f"{label}: expected {PATCH_SIZE}x{PATCH_SIZE} patch, got {h}x{w}"
            )
    elif divisible_by is not None and (h % divisible_by or w % divisible_by):
        raise SizeError(
            f"{label}: extents {h}x{w} not divisible by {divisible_by}"
        )
    mask = None
    if mask_key is not None and mask_key in f:
        mask = np.asarray(f[mask_key])
        if mask.ndim != 2:
            raise RankError(f"{label}: mask must be H×W, got rank {mask.ndim}")
        if mask.shape != (h, w):
            raise SizeError(
                f"{label}: mask extent {mask.shape} does not match image {h}x{w}"
            )
        if not np.all(np.isin(mask, (0, 1))):
            bad = sorted(set(np.unique(mask)) - {0, 1})
            raise InvalidMaskError(f"{label}: mask contains non-binary values {bad}")
        mask = mask.astype(np.float32)
    return img, mask


def _finish_sample(img, mask, sample_id: str, provenance: str) -> PatchSample:
    bad = ~np.isfinite(img)
    cleaned = int(bad.sum())
    if cleaned:
        img = np.where(bad, 0.0, img)
    return PatchSample(id=sample_id, img=img, mask=mask,
                       provenance=provenance, cleaned=cleaned)


def load_patch(path: str, image_key: str = "img", mask_key: str = "mask",
               strict_size: bool = True, divisible_by: int | None = None) -> PatchSample:
    """Read one patch file with full validation and NaN/Inf cleaning.

    strict_size enforces the 128×128 real-corpus extent; passing
    strict_size=False with `divisible_by` set accepts any extents divisible
    by that stride (the CLI's --any-size mode).
    """
    try:
        f = h5py.File(path, "r")
    except (OSError, FileNotFoundError) as e:
        raise UnreadableFileError(f"{path}: cannot open as HDF5: {e}") from e
    with f:
        img, mask = _read_datasets(f, path, image_key, mask_key,
                                   strict_size, divisible_by)
    stem = os.path.splitext(os.path.basename(path))[0]
    return _finish_sample(img, mask, stem, "file")


def load_patch_bytes(blob: bytes, name: str = "upload",
                     image_key: str = "img", mask_key: str = "mask",
                     strict_size: bool = False,
                     divisible_by: int | None = None) -> PatchSample:
    """Same validation as load_patch, but over an in-memory upload."""
    try:
        f = h5py.File(io.BytesIO(blob), "r")
    except OSError as e:
        raise UnreadableFileError(f"{name}: cannot open as HDF5: {e}") from e
    with f:
        img, mask = _read_datasets(f, name, image_key, mask_key,
                                   strict_size, divisible_by)
    return _finish_sample(img, mask, name, "upload")


def save_patch(path: str, sample: PatchSample) -> None:
    """Write a patch in the ingestion format (img float32, mask uint8)."""
    with h5py.File(path, "w") as f:
        f.create_dataset("img", data=sample.img.astype(np.float32))
        if sample.mask is not None:
            f.create_dataset("mask", data=sample.mask.astype(np.uint8))


def compute_ndvi(img: np.ndarray, nir_channel: int = 8, red_channel: int = 4) -> np.ndarray:
    """(NIR − Red) / (NIR + Red + eps), clamped to [−1, 1]. 1-based channels."""
    nir = img[:, :, nir_channel - 1].astype(np.float64)
    red = img[:, :, red_channel - 1].astype(np.float64)
    ndvi = (nir - red) / (nir + red + NDVI_EPS)
    return np.clip(ndvi, -1.0, 1.0).astype(np.float32)


@dataclass
class ChannelConfig:
    """Ordered model-input channels: 1-based source band indices plus the
    derived "ndvi" entry. The 6-channel configuration is
    [red, green, blue, NDVI, slope, DEM] = [4, 3, 2, "ndvi", 14, 13]."""

    channels: list = field(default_factory=lambda: list(range(1, N_SOURCE_BANDS + 1)))

    def __post_init__(self):
        seen = set()
        for ch in self.channels:
            if ch == "ndvi":
                key = "ndvi"
            elif isinstance(ch, int) and 1 <= ch <= N_SOURCE_BANDS:
                key = ch
            else:
                raise ValueError(
                    f"channel entry {ch!r} must be 'ndvi' or an integer in 1..{N_SOURCE_BANDS}"
                )
            if key in seen:
                raise ValueError(f"duplicate channel entry {ch!r}")
            seen.add(key)
        if not self.channels:
            raise ValueError("channel config must select at least one channel")

    @staticmethod
    def paper6() -> "ChannelConfig":
        return ChannelConfig([4, 3, 2, "ndvi", 14, 13])

    @staticmethod
    def identity14() -> "ChannelConfig":
        return ChannelConfig(list(range(1, N_SOURCE_BANDS + 1)))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        return {"channels": list(self.channels)}

    @staticmethod
    def from_dict(d: dict) -> "ChannelConfig":
        return ChannelConfig(list(d["channels"]))


def assemble_channels(sample: PatchSample, cfg: ChannelConfig) -> Tensor:
    """Stack the configured channels into a C×H×W tensor (NDVI on demand)."""
    planes = []
    for ch in cfg.channels:
        if ch == "ndvi":
            planes.append(compute_ndvi(sample.img))
        else:
            planes.append(sample.img[:, :, ch - 1])
    return Tensor(np.stack(planes, axis=0))


@dataclass
class BandStats:
    """Per-channel z-score statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def n_channels(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @staticmethod
    def from_dict(d: dict) -> "BandStats":
        return BandStats(np.asarray(d["mean"], dtype=np.float64),
                         np.asarray(d["std"], dtype=np.float64))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_json(s: str) -> "BandStats":
        return BandStats.from_dict(json.loads(s))


def fit_band_stats(samples: list, cfg: ChannelConfig) -> BandStats:
    """Population mean/std per configured channel over all pixels."""
    if not samples:
        raise ValueError("fit_band_stats needs at least one sample")
    acc_sum = np.zeros(cfg.n_channels, dtype=np.float64)
    acc_sq = np.zeros(cfg.n_channels, dtype=np.float64)
    count = 0
    for s in samples:
        x = assemble_channels(s, cfg).data.astype(np.float64)
        acc_sum += x.sum(axis=(1, 2))
        acc_sq += (x * x).sum(axis=(1, 2))
        count += x.shape[1] * x.shape[2]
    mean = acc_sum / count
    var = np.maximum(acc_sq / count - mean * mean, 0.0)
    return BandStats(mean=mean, std=np.sqrt(var))


def normalize(x: Tensor, stats: BandStats) -> Tensor:
    """Z-score per channel; zero-variance channels map to all-zero."""
    if x.shape[0] != stats.n_channels:
        raise ValueError(
            f"normalize: {x.shape[0]} channels vs stats for {stats.n_channels}"
        )
    std = stats.std.copy()
    dead = std == 0
    std[dead] = 1.0
    out = (x.data - stats.mean[:, None, None]) / std[:, None, None]
    out[dead, :, :] = 0.0
    return Tensor(out.astype(x.dtype))


def denormalize(x: Tensor, stats: BandStats) -> Tensor:
    """Inverse of `normalize` on channels with std > 0."""
    if x.shape[0] != stats.n_channels:
        raise ValueError(
            f"denormalize: {x.shape[0]} channels vs stats for {stats.n_channels}"
        )
    out = x.data * stats.std[:, None, None] + stats.mean[:, None, None]
    return Tensor(out.astype(x.dtype))


AUGMENT_OPS = ("hflip", "vflip", "rot90")


def augment(sample: PatchSample, op: str, k: int = 1) -> PatchSample:
    """Apply one geometric op to image and mask together.

    rot90 is clockwise, mapping (r, c) → (c, H−1−r); k repeats it.
    """
    if op not in AUGMENT_OPS:
        raise ValueError(f"unknown augmentation {op!r}; expected one of {AUGMENT_OPS}")
    img, mask = sample.img, sample.mask
    if op == "hflip":
        img = img[:, ::-1]
        mask = mask[:, ::-1] if mask is not None else None
    elif op == "vflip":
        img = img[::-1]
        mask = mask[::-1] if mask is not None else None
    else:
        img = np.rot90(img, -k, axes=(0, 1))
        mask = np.rot90(mask, -k) if mask is not None else None
    return PatchSample(
        id=sample.id,
        img=np.ascontiguousarray(img),
        mask=np.ascontiguousarray(mask) if mask is not None else None,
        provenance=sample.provenance,
        cleaned=sample.cleaned,
    )


def random_augment(sample: PatchSample, rng: Rng) -> PatchSample:
    """Draw one of {identity, hflip, vflip, rot90 k=1..3} uniformly."""
    choice = rng.randbelow(6)
    if choice == 0:
        return sample
    if choice == 1:
        return augment(sample, "hflip")
    if choice == 2:
        return augment(sample, "vflip")
    return augment(sample, "rot90", k=choice - 2)


def iter_batches(samples: list, cfg: ChannelConfig, batch_size: int,
                 stats: BandStats | None = None, shuffle: bool = False,
                 rng: Rng | None = None, augment_rng: Rng | None = None):
    """Yield (inputs N×C×H×W, masks N×1×H×W) batches.

    shuffle=False walks samples in id-sorted order; shuffle=True permutes
    with `rng`. The final short batch is emitted. Samples must carry masks.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not samples:
        raise ValueError("iter_batches: empty split")
    ordered = sorted(samples, key=lambda s: s.id)
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True needs an rng")
        ordered = rng.shuffle(ordered)
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start : start + batch_size]
        if augment_rng is not None:
            chunk = [random_augment(s, augment_rng) for s in chunk]
        xs, ys = [], []
        for s in chunk:
            if s.mask is None:
                raise ValueError(f"sample {s.id} has no mask; cannot form batches")
            x = assemble_channels(s, cfg)
            if stats is not None:
                x = normalize(x, stats)
            xs.append(x.data)
            ys.append(s.mask[None, :, :])
        yield Tensor(np.stack(xs)), Tensor(np.stack(ys))


def load_manifest(path: str) -> dict:
    """Read a split manifest: JSON mapping split name → list of file paths."""
    with open(path) as f:
        manifest = json.load(f)
    if not isinstance(manifest, dict) or not manifest:
        raise DataError(f"{path}: manifest must be a non-empty JSON object")
    for split, paths in manifest.items():
        if not isinstance(paths, list) or not all(isinstance(p, str) for p in paths):
            raise DataError(f"{path}: split {split!r} must list file paths")
    return manifest


def validate_manifest(manifest: dict) -> list:
    """Check split disjointness (fatal) and real-corpus counts (warning).

    Returns the list of warning strings (also emitted via warnings.warn).
    """
    ids = {}
    for split, paths in manifest.items():
        for p in paths:
            stem = os.path.splitext(os.path.basename(p))[0]
            if stem in ids and ids[stem] != split:
                raise DataError(
                    f"manifest: patch id {stem!r} appears in both "
                    f"{ids[stem]!r} and {split!r} splits"
                )
            ids[stem] = split
    notes = []
    counts = {split: len(paths) for split, paths in manifest.items()}
    diff = {
        k: (counts.get(k, 0), v)
        for k, v in REAL_SPLIT_COUNTS.items()
        if counts.get(k, 0) != v
    }
    if diff:
        msg = (
            "manifest counts differ from the published real-corpus splits "
            f"(got vs expected): {diff}"
        )
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    return notes


def dataset_stats(samples: list, cfg: ChannelConfig | None = None) -> dict:
    """Summary statistics for the stats CLI: per-channel moments and ranges,
    landslide fraction, and per-band mean separation inside vs outside the
    masks (the spectral-difference analysis)."""
    if not samples:
        raise ValueError("dataset_stats needs at least one sample")
    cfg = cfg or ChannelConfig.identity14()
    stats = fit_band_stats(samples, cfg)
    mins = np.full(cfg.n_channels, np.inf)
    maxs = np.full(cfg.n_channels, -np.inf)
    frac_num = 0
    frac_den = 0
    sep_in = np.zeros(cfg.n_channels)
    sep_out = np.zeros(cfg.n_channels)
    n_in = 0
    n_out = 0
    for s in samples:
        x = assemble_channels(s, cfg).data
        mins = np.minimum(mins, x.min(axis=(1, 2)))
        maxs = np.maximum(maxs, x.max(axis=(1, 2)))
        if s.mask is not None:
            m = s.mask.astype(bool)
            frac_num += int(m.sum())
            frac_den += m.size
            if m.any():
                sep_in += x[:, m].sum(axis=1)
                n_in += int(m.sum())
            if (~m).any():
                sep_out += x[:, ~m].sum(axis=1)
                n_out += int((~m).sum())
    out = {
        "n_samples": len(samples),
        "channels": [str(c) for c in cfg.channels],
        "mean": [float(v) for v in stats.mean],
        "std": [float(v) for v in stats.std],
        "min": [float(v) for v in mins],
        "max": [float(v) for v in maxs],
    }
    if frac_den:
        out["landslide_fraction"] = frac_num / frac_den
    if n_in and n_out:
        out["mask_mean_inside"] = [float(v) for v in sep_in / n_in]
        out["mask_mean_outside"] = [float(v) for v in sep_out / n_out]
    return out
