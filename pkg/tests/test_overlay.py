"""Composite, stretch, and overlay rendering."""
import numpy as np
import pytest

from landseg.overlay import (
    from_png_bytes,
    mask_image,
    percentile_stretch,
    render_overlay,
    rgb_composite,
    to_png_bytes,
)


class TestStretch:
    def test_output_range_and_dtype(self):
        band = np.linspace(-5, 40, 10000).reshape(100, 100)
        out = percentile_stretch(band)
        assert out.dtype == np.uint8
        assert out.min() == 0 and out.max() == 255

    def test_clips_outliers(self):
        band = np.linspace(0, 1, 100).reshape(10, 10)
        band[0, 0] = 1e6  # a hot pixel must not crush the rest to black
        out = percentile_stretch(band)
        assert out[0, 0] == 255
        # without the percentile clip everything else would map to ~0
        assert np.median(out) > 100

    def test_constant_band_is_black(self):
        assert not percentile_stretch(np.full((8, 8), 3.0)).any()


class TestComposite:
    def test_band_selection(self):
        img = np.zeros((4, 4, 14), dtype=np.float32)
        img[:, :, 3] = np.linspace(0, 1, 16).reshape(4, 4)  # band 4 -> red
        rgb = rgb_composite(img, bands=(4, 3, 2))
        assert rgb.shape == (4, 4, 3)
        assert rgb[:, :, 0].max() == 255
        assert not rgb[:, :, 1].any() and not rgb[:, :, 2].any()

    def test_band_out_of_range(self):
        img = np.zeros((4, 4, 14), dtype=np.float32)
        with pytest.raises(ValueError):
            rgb_composite(img, bands=(15, 3, 2))
        with pytest.raises(ValueError):
            rgb_composite(img, bands=(0, 3, 2))


class TestOverlay:
    def test_empty_mask_is_identity(self):
        rgb = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
        out = render_overlay(rgb, np.zeros((4, 4), dtype=np.uint8))
        assert np.array_equal(out, rgb)

    def test_full_mask_alpha_one_is_solid_red(self):
        rgb = np.full((4, 4, 3), 200, dtype=np.uint8)
        out = render_overlay(rgb, np.ones((4, 4), dtype=np.uint8), alpha=1.0)
        assert np.array_equal(out[..., 0], np.full((4, 4), 255))
        assert not out[..., 1:].any()

    def test_half_alpha_blend_arithmetic(self):
        rgb = np.zeros((1, 1, 3), dtype=np.uint8)
        rgb[0, 0] = (100, 60, 20)
        out = render_overlay(rgb, np.ones((1, 1), dtype=np.uint8), alpha=0.5)
        # channel = 0.5*orig + 0.5*(255, 0, 0), rounded
        assert tuple(out[0, 0]) == (178, 30, 10)

    def test_extent_mismatch_rejected(self):
        rgb = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            render_overlay(rgb, np.zeros((4, 5), dtype=np.uint8))

    def test_alpha_bounds(self):
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        mask = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(ValueError):
            render_overlay(rgb, mask, alpha=1.5)


class TestPng:
    def test_rgb_round_trip(self):
        arr = np.arange(48, dtype=np.uint8).reshape(4, 4, 3)
        assert np.array_equal(from_png_bytes(to_png_bytes(arr)), arr)

    def test_grayscale_round_trip(self):
        mask = mask_image(np.eye(8))
        assert np.array_equal(from_png_bytes(to_png_bytes(mask)), mask)
        assert set(np.unique(mask)) == {0, 255}
