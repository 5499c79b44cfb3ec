"""RGB composites, mask rendering, and the red prediction overlay."""
import io

import numpy as np
from PIL import Image

# 1-based source bands used for the display composite: red, green, blue
DEFAULT_DISPLAY_BANDS = (4, 3, 2)


def percentile_stretch(band: np.ndarray, lo: float = 2.0,
                       hi: float = 98.0) -> np.ndarray:
    """Map the [lo, hi] percentile range of one band onto [0, 255] uint8."""
    band = band.astype(np.float64)
    p_lo, p_hi = np.percentile(band, [lo, hi])
    if p_hi <= p_lo:
        return np.zeros(band.shape, dtype=np.uint8)
    scaled = (band - p_lo) / (p_hi - p_lo)
    return (np.clip(scaled, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def rgb_composite(img: np.ndarray, bands=DEFAULT_DISPLAY_BANDS) -> np.ndarray:
    """H x W x 3 uint8 composite from the configured display bands."""
    if img.ndim != 3:
        raise ValueError(f"expected an HxWxC image, got shape {img.shape}")
    channels = []
    for b in bands:
        if not (1 <= b <= img.shape[2]):
            raise ValueError(
                f"display band {b} outside 1..{img.shape[2]}"
            )
        channels.append(percentile_stretch(img[:, :, b - 1]))
    return np.stack(channels, axis=-1)


def mask_image(mask: np.ndarray) -> np.ndarray:
    """Binary mask as black/white uint8 (255 inside the landslide)."""
    if mask.ndim != 2:
        raise ValueError(f"expected an HxW mask, got shape {mask.shape}")
    return (mask > 0).astype(np.uint8) * 255


def render_overlay(rgb: np.ndarray, mask: np.ndarray,
                   alpha: float = 0.5) -> np.ndarray:
    """Blend pure red over the composite wherever the mask is set.

    Inside the mask each channel becomes (1-alpha)*orig + alpha*(255,0,0);
    outside, pixels pass through untouched. alpha=0 is the identity and
    alpha=1 paints solid red.
    """
    if rgb.shape[:2] != mask.shape:
        raise ValueError(
            f"extent mismatch: composite {rgb.shape[:2]} vs mask {mask.shape}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    out = rgb.astype(np.float64)
    red = np.array([255.0, 0.0, 0.0])
    inside = mask > 0
    out[inside] = (1.0 - alpha) * out[inside] + alpha * red
    return out.round().astype(np.uint8)


def to_png_bytes(arr: np.ndarray) -> bytes:
    """Encode an HxW (grayscale) or HxWx3 (RGB) uint8 array as PNG."""
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(blob: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(blob)))
