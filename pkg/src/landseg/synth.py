"""Deterministic synthetic patch generator.

Stands in for the real corpus at desk scale: masks are unions of random
ellipses (landslide fraction kept in [0.02, 0.4] by rejection), and the 14
emitted bands mimic the real layout closely enough that real-data channel
configurations run unchanged. Inside the mask the NIR band drops and the red
band rises (so NDVI is lower over "landslides"), and the slope band carries a
bump (terrain correlation).
"""
from __future__ import annotations

import json
import os

import numpy as np

from .data import PatchSample, save_patch
from .tensor import Rng

MIN_FRACTION = 0.02
MAX_FRACTION = 0.4
NIR_BAND = 8  # 1-based
RED_BAND = 4
DEM_BAND = 13
SLOPE_BAND = 14


def _smooth_field(rng: Rng, size: int, coarse: int = 8) -> np.ndarray:
    """Bilinear interpolation of a coarse random grid onto size×size."""
    grid = rng.uniform((coarse + 1, coarse + 1), -1.0, 1.0)
    t = np.linspace(0.0, coarse, size)
    i0 = np.minimum(t.astype(int), coarse - 1)
    f = t - i0
    rows = grid[i0, :] * (1.0 - f)[:, None] + grid[i0 + 1, :] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def _ellipse_mask(rng: Rng, size: int) -> np.ndarray:
    """Union of 1-3 rotated ellipses as a float {0,1} mask."""
    n_blobs = 1 + rng.randbelow(3)
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_blobs):
        cy = rng.uniform(None, 0.2 * size, 0.8 * size)
        cx = rng.uniform(None, 0.2 * size, 0.8 * size)
        a = rng.uniform(None, 0.05 * size, 0.25 * size)
        b = rng.uniform(None, 0.05 * size, 0.25 * size)
        theta = rng.uniform(None, 0.0, np.pi)
        dy, dx = rr - cy, cc - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask.astype(np.float32)


def _gradient_magnitude(z: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(z)
    return np.sqrt(gy * gy + gx * gx)


def synth_patch(rng: Rng, size: int, index: int, seed_tag: int) -> PatchSample:
    """Generate one synthetic sample from the given stream."""
    mask = None
    for _ in range(200):  # rejection keeps landslide fraction in range
        candidate = _ellipse_mask(rng, size)
        frac = float(candidate.mean())
        if MIN_FRACTION <= frac <= MAX_FRACTION:
            mask = candidate
            break
    if mask is None:
        raise RuntimeError("ellipse rejection failed to converge (200 draws)")

    img = np.zeros((size, size, 14), dtype=np.float32)
    for band in range(1, 13):
        base = 0.25 + 0.04 * band / 12.0
        field = _smooth_field(rng, size)
        noise = rng.uniform((size, size), -0.02, 0.02)
        img[:, :, band - 1] = base + 0.1 * field + noise
    # landslides strip vegetation: NIR falls, red rises inside the mask
    img[:, :, NIR_BAND - 1] = 0.6 + 0.1 * _smooth_field(rng, size) - 0.35 * mask
    img[:, :, RED_BAND - 1] = 0.2 + 0.05 * _smooth_field(rng, size) + 0.25 * mask
    dem = 0.5 + 0.4 * _smooth_field(rng, size, coarse=4)
    img[:, :, DEM_BAND - 1] = dem
    slope = 8.0 * _gradient_magnitude(dem) + 0.3 * mask
    img[:, :, SLOPE_BAND - 1] = slope + rng.uniform((size, size), 0.0, 0.02)
    np.clip(img, 0.0, 1.5, out=img)
    return PatchSample(
        id=f"synth-{seed_tag}-{index:04d}",
        img=img,
        mask=mask,
        provenance="synthetic",
    )


def synth_dataset(n: int, size: int = 128, seed: int = 0) -> list:
    """Generate n deterministic samples (same seed → identical arrays)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 4:
        raise ValueError("size must be >= 4")
    parent = Rng(seed)
    return [synth_patch(parent.split(), size, i, seed) for i in range(n)]


def write_synth_dataset(out_dir: str, n: int, size: int = 128, seed: int = 0,
                        splits: tuple = (0.7, 0.15, 0.15)) -> dict:
    """Write n patches plus a train/validation/test manifest; returns the
    manifest (paths relative to out_dir)."""
    if len(splits) != 3 or abs(sum(splits) - 1.0) > 1e-9:
        raise ValueError("splits must be three fractions summing to 1")
    os.makedirs(out_dir, exist_ok=True)
    samples = synth_dataset(n, size, seed)
    names = []
    for s in samples:
        name = f"{s.id}.h5"
        save_patch(os.path.join(out_dir, name), s)
        names.append(name)
    n_train = max(1, round(n * splits[0]))
    n_val = max(1, round(n * splits[1])) if n - n_train >= 2 else max(0, n - n_train - 1)
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    manifest = {
        "train": names[:n_train],
        "validation": names[n_train : n_train + n_val],
        "test": names[n_train + n_val :],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
