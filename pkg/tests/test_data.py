"""Ingestion validation, channel assembly, normalization, augmentation,
batching, manifests, and the synthetic generator."""
import json

import h5py
import numpy as np
import pytest

from landseg.data import (
    BandStats,
    ChannelConfig,
    ChannelCountError,
    DataError,
    InvalidMaskError,
    MissingKeyError,
    PatchSample,
    RankError,
    SizeError,
    UnreadableFileError,
    assemble_channels,
    augment,
    compute_ndvi,
    dataset_stats,
    denormalize,
    fit_band_stats,
    iter_batches,
    load_manifest,
    load_patch,
    normalize,
    random_augment,
    save_patch,
    validate_manifest,
)
from landseg.synth import synth_dataset, write_synth_dataset
from landseg.tensor import Rng, Tensor


def _write_h5(path, img=None, mask=None, **extra):
    with h5py.File(path, "w") as f:
        if img is not None:
            f.create_dataset("img", data=img)
        if mask is not None:
            f.create_dataset("mask", data=mask)
        for k, v in extra.items():
            f.create_dataset(k, data=v)


@pytest.fixture
def sample64():
    return synth_dataset(1, size=64, seed=7)[0]


class TestLoadPatch:
    def test_valid_128_file(self, tmp_path):
        img = np.zeros((128, 128, 14), dtype=np.float32)
        mask = np.zeros((128, 128), dtype=np.uint8)
        p = tmp_path / "a.h5"
        _write_h5(p, img, mask)
        s = load_patch(str(p))
        assert s.img.shape == (128, 128, 14)
        assert s.mask.shape == (128, 128)
        assert s.id == "a"

    def test_strict_size_names_expected_extent(self, tmp_path):
        p = tmp_path / "small.h5"
        _write_h5(p, np.zeros((64, 64, 14), dtype=np.float32))
        with pytest.raises(SizeError) as exc:
            load_patch(str(p))
        assert "128x128" in str(exc.value)

    def test_any_size_divisibility(self, tmp_path):
        p = tmp_path / "small.h5"
        _write_h5(p, np.zeros((64, 64, 14), dtype=np.float32))
        s = load_patch(str(p), strict_size=False, divisible_by=8)
        assert s.img.shape == (64, 64, 14)
        with pytest.raises(SizeError):
            load_patch(str(p), strict_size=False, divisible_by=24)

    def test_missing_image_key(self, tmp_path):
        p = tmp_path / "nokey.h5"
        _write_h5(p, None, None, other=np.zeros(3))
        with pytest.raises(MissingKeyError) as exc:
            load_patch(str(p))
        assert "img" in str(exc.value)

    def test_wrong_rank(self, tmp_path):
        p = tmp_path / "rank.h5"
        _write_h5(p, np.zeros((128, 128), dtype=np.float32))
        with pytest.raises(RankError):
            load_patch(str(p))

    def test_wrong_channel_count(self, tmp_path):
        p = tmp_path / "chan.h5"
        _write_h5(p, np.zeros((128, 128, 6), dtype=np.float32))
        with pytest.raises(ChannelCountError):
            load_patch(str(p))

    def test_unreadable_file(self, tmp_path):
        p = tmp_path / "junk.h5"
        p.write_bytes(b"not hdf5 at all")
        with pytest.raises(UnreadableFileError):
            load_patch(str(p))
        with pytest.raises(UnreadableFileError):
            load_patch(str(tmp_path / "absent.h5"))

    def test_nonbinary_mask(self, tmp_path):
        p = tmp_path / "badmask.h5"
        mask = np.zeros((128, 128), dtype=np.uint8)
        mask[0, 0] = 2
        _write_h5(p, np.zeros((128, 128, 14), dtype=np.float32), mask)
        with pytest.raises(InvalidMaskError) as exc:
            load_patch(str(p))
        assert "2" in str(exc.value)

    def test_nan_inf_cleaning_counted(self, tmp_path):
        img = np.ones((128, 128, 14), dtype=np.float32)
        img[0, 0, 0] = np.nan
        img[1, 1, 1] = np.inf
        img[2, 2, 2] = -np.inf
        p = tmp_path / "dirty.h5"
        _write_h5(p, img)
        s = load_patch(str(p))
        assert s.cleaned == 3
        assert np.isfinite(s.img).all()
        assert s.img[0, 0, 0] == 0.0

    def test_hdf5_round_trip_bitwise(self, tmp_path, sample64):
        p = tmp_path / "rt.h5"
        save_patch(str(p), sample64)
        back = load_patch(str(p), strict_size=False)
        assert np.array_equal(back.img, sample64.img)
        assert np.array_equal(back.mask, sample64.mask)


class TestNdvi:
    def test_hand_value(self):
        img = np.zeros((1, 1, 14), dtype=np.float32)
        img[0, 0, 7] = 0.8  # NIR (band 8)
        img[0, 0, 3] = 0.2  # red (band 4)
        assert compute_ndvi(img)[0, 0] == pytest.approx(0.6, abs=1e-6)

    def test_equal_bands_zero(self):
        img = np.full((2, 2, 14), 0.5, dtype=np.float32)
        assert np.allclose(compute_ndvi(img), 0.0, atol=1e-6)

    def test_zero_zero_guarded(self):
        img = np.zeros((2, 2, 14), dtype=np.float32)
        out = compute_ndvi(img)
        assert np.all(out == 0.0)

    def test_clamped_to_unit_interval(self):
        img = np.zeros((1, 1, 14), dtype=np.float32)
        img[0, 0, 7] = 1e-12
        img[0, 0, 3] = -0.5  # malformed reflectance still stays in range
        out = compute_ndvi(img)
        assert -1.0 <= out[0, 0] <= 1.0


class TestChannelConfig:
    def test_paper6_layout(self, sample64):
        cfg = ChannelConfig.paper6()
        assert cfg.channels == [4, 3, 2, "ndvi", 14, 13]
        assert cfg.n_channels == 6
        x = assemble_channels(sample64, cfg)
        assert x.shape == (6, 64, 64)
        assert np.allclose(x.data[3], compute_ndvi(sample64.img), atol=1e-6)
        assert np.array_equal(x.data[0], sample64.img[:, :, 3])  # red = band 4
        assert np.array_equal(x.data[5], sample64.img[:, :, 12])  # DEM = band 13

    def test_identity14_passthrough(self, sample64):
        x = assemble_channels(sample64, ChannelConfig.identity14())
        assert x.shape == (14, 64, 64)
        assert np.array_equal(x.data, sample64.img.transpose(2, 0, 1))

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            ChannelConfig([1, 1])
        with pytest.raises(ValueError):
            ChannelConfig(["ndvi", "ndvi"])

    def test_bad_index_rejected(self):
        with pytest.raises(ValueError):
            ChannelConfig([0])
        with pytest.raises(ValueError):
            ChannelConfig([15])
        with pytest.raises(ValueError):
            ChannelConfig(["slope"])

    def test_dict_round_trip(self):
        cfg = ChannelConfig.paper6()
        assert ChannelConfig.from_dict(cfg.to_dict()).channels == cfg.channels


class TestBandStats:
    def test_hand_zscore(self):
        img = np.zeros((1, 2, 14), dtype=np.float32)
        img[0, 0, 0], img[0, 1, 0] = 1.0, 3.0
        s = PatchSample(id="s", img=img)
        cfg = ChannelConfig([1])
        stats = fit_band_stats([s], cfg)
        assert stats.mean[0] == pytest.approx(2.0)
        assert stats.std[0] == pytest.approx(1.0)
        out = normalize(assemble_channels(s, cfg), stats)
        assert np.allclose(out.data, [[[-1.0, 1.0]]], atol=1e-6)

    def test_constant_channel_guard(self):
        img = np.full((2, 2, 14), 5.0, dtype=np.float32)
        s = PatchSample(id="c", img=img)
        cfg = ChannelConfig([1, 2])
        stats = fit_band_stats([s], cfg)
        assert stats.std[0] == 0.0
        out = normalize(assemble_channels(s, cfg), stats)
        assert np.all(out.data == 0.0)

    def test_normalized_moments(self, sample64):
        cfg = ChannelConfig.paper6()
        stats = fit_band_stats([sample64], cfg)
        out = normalize(assemble_channels(sample64, cfg), stats).data
        for c in range(6):
            assert abs(out[c].mean()) < 1e-5

    def test_denormalize_inverts(self, sample64):
        cfg = ChannelConfig.paper6()
        stats = fit_band_stats([sample64], cfg)
        x = assemble_channels(sample64, cfg)
        back = denormalize(normalize(x, stats), stats)
        assert np.allclose(back.data, x.data, atol=1e-5)

    def test_channel_mismatch(self, sample64):
        stats = fit_band_stats([sample64], ChannelConfig.paper6())
        with pytest.raises(ValueError):
            normalize(assemble_channels(sample64, ChannelConfig.identity14()), stats)

    def test_json_round_trip(self, sample64):
        stats = fit_band_stats([sample64], ChannelConfig.paper6())
        back = BandStats.from_json(stats.to_json())
        assert np.allclose(back.mean, stats.mean)
        assert np.allclose(back.std, stats.std)


class TestAugment:
    def test_hflip_involution(self, sample64):
        twice = augment(augment(sample64, "hflip"), "hflip")
        assert np.array_equal(twice.img, sample64.img)
        assert np.array_equal(twice.mask, sample64.mask)

    def test_vflip_involution(self, sample64):
        twice = augment(augment(sample64, "vflip"), "vflip")
        assert np.array_equal(twice.img, sample64.img)

    def test_rot90_four_times_identity(self, sample64):
        out = sample64
        for _ in range(4):
            out = augment(out, "rot90")
        assert np.array_equal(out.img, sample64.img)
        assert np.array_equal(out.mask, sample64.mask)

    def test_rot90_marker_coordinate(self):
        img = np.zeros((4, 4, 14), dtype=np.float32)
        mask = np.zeros((4, 4), dtype=np.float32)
        img[0, 0, 0] = 1.0
        mask[0, 0] = 1.0
        out = augment(PatchSample(id="m", img=img, mask=mask), "rot90")
        assert out.img[0, 3, 0] == 1.0  # (r,c) -> (c, H-1-r): (0,0) -> (0,3)
        assert out.mask[0, 3] == 1.0
        assert out.img.sum() == 1.0

    def test_mask_and_image_transform_together(self, sample64):
        out = augment(sample64, "rot90", k=2)
        assert np.array_equal(out.img[:, :, 0], np.rot90(sample64.img[:, :, 0], -2))
        assert np.array_equal(out.mask, np.rot90(sample64.mask, -2))

    def test_unknown_op_rejected(self, sample64):
        with pytest.raises(ValueError):
            augment(sample64, "zoom")

    def test_random_augment_deterministic(self, sample64):
        a = random_augment(sample64, Rng(3))
        b = random_augment(sample64, Rng(3))
        assert np.array_equal(a.img, b.img)

    def test_augment_commutes_with_assembly(self, sample64):
        cfg = ChannelConfig.paper6()
        for op, k in [("hflip", 1), ("vflip", 1), ("rot90", 1), ("rot90", 3)]:
            aug_first = assemble_channels(augment(sample64, op, k), cfg).data
            asm = assemble_channels(sample64, cfg).data
            if op == "hflip":
                asm_first = asm[:, :, ::-1]
            elif op == "vflip":
                asm_first = asm[:, ::-1, :]
            else:
                asm_first = np.rot90(asm, -k, axes=(1, 2))
            assert np.allclose(aug_first, asm_first, atol=1e-6), (op, k)


class TestIterBatches:
    def _samples(self, n=10):
        return synth_dataset(n, size=16, seed=11)

    def test_batch_sizes_with_short_tail(self):
        batches = list(
            iter_batches(self._samples(10), ChannelConfig.paper6(), batch_size=4)
        )
        assert [b[0].shape[0] for b in batches] == [4, 4, 2]
        assert batches[0][0].shape == (4, 6, 16, 16)
        assert batches[0][1].shape == (4, 1, 16, 16)

    def test_unshuffled_is_id_sorted(self):
        samples = self._samples(5)[::-1]
        x, _ = next(iter(iter_batches(samples, ChannelConfig([1]), batch_size=5)))
        ordered = sorted(samples, key=lambda s: s.id)
        assert np.array_equal(x.data[0, 0], ordered[0].img[:, :, 0])

    def test_same_seed_same_order(self):
        samples = self._samples(8)
        cfg = ChannelConfig([1])
        a = [x.data.copy() for x, _ in iter_batches(samples, cfg, 3, shuffle=True, rng=Rng(5))]
        b = [x.data.copy() for x, _ in iter_batches(samples, cfg, 3, shuffle=True, rng=Rng(5))]
        assert all(np.array_equal(p, q) for p, q in zip(a, b))

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError):
            next(iter(iter_batches([], ChannelConfig([1]), 4)))

    def test_normalization_applied(self):
        samples = self._samples(2)
        cfg = ChannelConfig.paper6()
        stats = fit_band_stats(samples, cfg)
        x, _ = next(iter(iter_batches(samples, cfg, 2, stats=stats)))
        assert abs(x.data.mean()) < 0.2  # roughly centered


class TestManifest:
    def test_load_and_validate_disjoint(self, tmp_path):
        m = {"train": ["a.h5", "b.h5"], "validation": ["c.h5"], "test": ["d.h5"]}
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps(m))
        loaded = load_manifest(str(p))
        assert loaded == m
        with pytest.warns(UserWarning):
            notes = validate_manifest(loaded)
        assert notes  # synthetic counts differ from the real corpus

    def test_overlapping_ids_rejected(self):
        m = {"train": ["x/a.h5"], "test": ["y/a.h5"]}
        with pytest.raises(DataError) as exc:
            validate_manifest(m)
        assert "'a'" in str(exc.value)

    def test_real_counts_accepted_silently(self):
        m = {
            "train": [f"t{i}.h5" for i in range(3799)],
            "validation": [f"v{i}.h5" for i in range(245)],
            "test": [f"s{i}.h5" for i in range(800)],
        }
        assert validate_manifest(m) == []

    def test_malformed_manifest_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"train": "not-a-list"}))
        with pytest.raises(DataError):
            load_manifest(str(p))


class TestSynth:
    def test_deterministic_generation(self):
        a = synth_dataset(4, size=32, seed=42)
        b = synth_dataset(4, size=32, seed=42)
        for s, t in zip(a, b):
            assert s.id == t.id
            assert np.array_equal(s.img, t.img)
            assert np.array_equal(s.mask, t.mask)

    def test_fraction_constraint(self):
        for s in synth_dataset(12, size=32, seed=0):
            assert 0.02 <= s.mask.mean() <= 0.4

    def test_ndvi_lower_inside_mask(self):
        samples = synth_dataset(6, size=32, seed=3)
        inside, outside = [], []
        for s in samples:
            ndvi = compute_ndvi(s.img)
            m = s.mask.astype(bool)
            inside.append(ndvi[m].mean())
            outside.append(ndvi[~m].mean())
        assert np.mean(inside) < np.mean(outside)

    def test_fourteen_channels_and_finite(self):
        s = synth_dataset(1, size=16, seed=9)[0]
        assert s.img.shape == (16, 16, 14)
        assert np.isfinite(s.img).all()
        assert s.provenance == "synthetic"

    def test_write_dataset_files_and_manifest(self, tmp_path):
        manifest = write_synth_dataset(str(tmp_path), 10, size=16, seed=5)
        assert set(manifest) == {"train", "validation", "test"}
        assert sum(len(v) for v in manifest.values()) == 10
        validate_disjoint = {p for v in manifest.values() for p in v}
        assert len(validate_disjoint) == 10
        loaded = load_patch(str(tmp_path / manifest["train"][0]), strict_size=False)
        assert loaded.img.shape == (16, 16, 14)
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == manifest

    def test_write_dataset_bitwise_stable(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_synth_dataset(str(d1), 3, size=16, seed=4)
        write_synth_dataset(str(d2), 3, size=16, seed=4)
        for name in ("synth-4-0000.h5", "manifest.json"):
            a = load_patch(str(d1 / name), strict_size=False) if name.endswith(".h5") else (d1 / name).read_text()
            b = load_patch(str(d2 / name), strict_size=False) if name.endswith(".h5") else (d2 / name).read_text()
            if name.endswith(".h5"):
                assert np.array_equal(a.img, b.img)
            else:
                assert a == b


class TestDatasetStats:
    def test_summary_fields(self):
        samples = synth_dataset(3, size=16, seed=2)
        out = dataset_stats(samples)
        assert out["n_samples"] == 3
        assert len(out["mean"]) == 14
        assert 0.02 <= out["landslide_fraction"] <= 0.4
        nir = 7  # 0-based index of band 8 in identity order
        assert out["mask_mean_inside"][nir] < out["mask_mean_outside"][nir]
