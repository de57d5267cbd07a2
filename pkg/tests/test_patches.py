"""Tissue segmentation, patch extraction, and augmentation tests."""

import numpy as np
import pytest

from glandscreen.errors import DimensionMismatch
from glandscreen.patches import (
    AugmentConfig,
    Patch,
    PatchParams,
    augment,
    extract_patches,
    segment_tissue,
)

from synth import blob_image

PURPLE = (150, 70, 170)


class TestSegmentTissue:
    def test_white_image_empty_mask(self):
        img = np.full((64, 64, 3), 255, dtype=np.uint8)
        assert not segment_tissue(img).any()

    def test_saturated_dark_image_full_mask(self):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        img[:, :] = (180, 30, 40)
        assert segment_tissue(img).all()

    def test_disk_mask_matches_disk_up_to_morphology(self):
        params = PatchParams()
        radius = 60
        img = blob_image((256, 256), [(128, 128)], radius, color=PURPLE)
        mask = segment_tissue(img, params)
        rr, cc = np.mgrid[0:256, 0:256]
        dist2 = (rr - 128) ** 2 + (cc - 128) ** 2
        pad = params.open_radius + 1
        assert not mask[dist2 > (radius + pad) ** 2].any()
        assert mask[dist2 <= (radius - pad) ** 2].all()

    def test_masking_out_background_shrinks_mask(self):
        # Whitening the complement and re-segmenting never adds pixels.
        for seed in range(5):
            rng = np.random.default_rng(seed)
            img = blob_image(
                (200, 200),
                [tuple(rng.integers(40, 160, size=2)) for _ in range(3)],
                int(rng.integers(15, 50)),
                color=PURPLE,
            )
            mask = segment_tissue(img)
            whited = img.copy()
            whited[~mask] = 255
            again = segment_tissue(whited)
            assert not (again & ~mask).any()


class TestExtractPatches:
    def test_two_blobs_give_two_patches_at_centroids(self):
        centers = [(300, 260), (700, 720)]
        radius = 80
        img = blob_image((1024, 1024), centers, radius, color=PURPLE)
        patches = extract_patches(img, segment_tissue(img), source_id="two_blobs")
        assert len(patches) == 2
        got_centers = sorted(
            (y + h / 2.0, x + w / 2.0) for x, y, w, h in (p.source_bbox for p in patches)
        )
        for (gr, gc), (er, ec) in zip(got_centers, sorted(centers)):
            assert abs(gr - er) <= 10 and abs(gc - ec) <= 10
        assert not any(p.is_fallback for p in patches)

    def test_blank_image_gives_single_fallback(self):
        img = np.full((512, 512, 3), 255, dtype=np.uint8)
        patches = extract_patches(img, segment_tissue(img))
        assert len(patches) == 1
        assert patches[0].is_fallback
        assert patches[0].source_bbox == (0, 0, 512, 512)

    def test_patch_shape_contract(self):
        img = blob_image((600, 400), [(300, 200)], 70, color=PURPLE)
        for patch in extract_patches(img, segment_tissue(img)):
            assert patch.pixels.shape == (320, 320, 3)
            assert patch.pixels.dtype == np.uint8

    def test_sorted_by_area_and_capped(self):
        centers = [(100, 100), (100, 300), (300, 100), (300, 300)]
        radii = [70, 50, 60, 40]
        img = np.full((400, 400, 3), 255, dtype=np.uint8)
        rr, cc = np.mgrid[0:400, 0:400]
        for (r, c), rad in zip(centers, radii):
            img[(rr - r) ** 2 + (cc - c) ** 2 <= rad**2] = PURPLE
        params = PatchParams(max_patches=3, min_region_area=1000)
        patches = extract_patches(img, segment_tissue(img, params), params)
        assert len(patches) == 3
        areas = [p.source_bbox[2] * p.source_bbox[3] for p in patches]
        assert areas == sorted(areas, reverse=True)

    def test_equal_areas_tie_break_by_position(self):
        img = blob_image((400, 600), [(200, 150), (200, 450)], 50, color=PURPLE)
        patches = extract_patches(img, segment_tissue(img))
        assert len(patches) == 2
        # identical blob areas: row then column ordering puts the left one first
        assert patches[0].source_bbox[0] < patches[1].source_bbox[0]

    def test_small_regions_fall_back(self):
        img = blob_image((400, 400), [(200, 200)], 20, color=PURPLE)  # area ~1256
        patches = extract_patches(img, segment_tissue(img))
        assert len(patches) == 1 and patches[0].is_fallback

    def test_bbox_within_bounds(self):
        img = blob_image((500, 500), [(30, 30)], 60, color=PURPLE)  # clipped corner blob
        for p in extract_patches(img, segment_tissue(img)):
            x, y, w, h = p.source_bbox
            assert x >= 0 and y >= 0 and x + w <= 500 and y + h <= 500

    def test_mask_shape_mismatch(self):
        img = np.full((64, 64, 3), 255, dtype=np.uint8)
        with pytest.raises(DimensionMismatch):
            extract_patches(img, np.zeros((32, 32), dtype=bool))


def _make_patch(seed: int = 0) -> Patch:
    rng = np.random.default_rng(seed)
    return Patch(rng.integers(0, 256, size=(320, 320, 3), dtype=np.uint8), (0, 0, 320, 320))


class TestAugment:
    def test_disabled_is_identity(self):
        patch = _make_patch()
        out = augment(patch, AugmentConfig.disabled(), np.random.default_rng(0))
        assert np.array_equal(out.pixels, patch.pixels)

    def test_forced_hflip_is_involution(self):
        cfg = AugmentConfig(
            hflip=True, vflip=False, rotate=False, shift_scale_rotate=False,
            brightness_contrast=False, probability=1.0,
        )
        patch = _make_patch(1)
        once = augment(patch, cfg, np.random.default_rng(10))
        twice = augment(once, cfg, np.random.default_rng(11))
        assert not np.array_equal(once.pixels, patch.pixels)
        assert np.array_equal(twice.pixels, patch.pixels)

    def test_fixed_seed_is_byte_reproducible(self):
        cfg = AugmentConfig(probability=1.0, seed=7)
        patch = _make_patch(2)
        a = augment(patch, cfg, np.random.default_rng(cfg.seed))
        b = augment(patch, cfg, np.random.default_rng(cfg.seed))
        assert np.array_equal(a.pixels, b.pixels)

    def test_output_shape_preserved(self):
        cfg = AugmentConfig(probability=1.0)
        out = augment(_make_patch(3), cfg, np.random.default_rng(5))
        assert out.pixels.shape == (320, 320, 3)
        assert out.pixels.dtype == np.uint8

    def test_metadata_carried_through(self):
        patch = Patch(
            np.zeros((320, 320, 3), dtype=np.uint8), (4, 8, 100, 100),
            source_id="img_1", is_fallback=True,
        )
        out = augment(patch, AugmentConfig(probability=1.0), np.random.default_rng(0))
        assert out.source_bbox == (4, 8, 100, 100)
        assert out.source_id == "img_1"
        assert out.is_fallback
