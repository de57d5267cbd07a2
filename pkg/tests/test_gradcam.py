"""Grad-CAM heatmap and overlay tests against hand-built toy networks."""

import numpy as np
import pytest
import torch
import torch.nn as nn

from glandscreen.errors import DimensionMismatch, NoConvFeatures
from glandscreen.gradcam import (
    composite_heatmap,
    explain_image,
    gradcam,
    overlay,
    peak_coordinates,
)
from glandscreen.models import ModelConfig, build_model
from glandscreen.patches import Patch, PatchParams
from glandscreen.pipeline import PreprocessOptions

from synth import blob_image


class QuadrantFeatures(nn.Module):
    """Single feature channel active only in the top-left quadrant."""

    def __init__(self, size: int = 8) -> None:
        super().__init__()
        mask = torch.zeros(1, 1, size, size)
        mask[..., : size // 2, : size // 2] = 1.0
        self.register_buffer("mask", mask)
        self.pool = nn.AdaptiveAvgPool2d(size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(x.abs().mean(dim=1, keepdim=True)) * self.mask


class ToyModel(nn.Module):
    """Class-0 score is the plain sum of the quadrant feature channel."""

    def __init__(self, scale: float = 1.0) -> None:
        super().__init__()
        self.features = QuadrantFeatures()
        self.scale = scale

    def head(self, feats: torch.Tensor) -> torch.Tensor:
        score = self.scale * feats.sum(dim=(1, 2, 3))
        return torch.stack([score, torch.zeros_like(score)], dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class ConstantScoreModel(ToyModel):
    def head(self, feats: torch.Tensor) -> torch.Tensor:
        batch = feats.shape[0]
        return torch.ones(batch, 2)


class FlatFeatures(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.mean(dim=(2, 3))


class FlatModel(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.features = FlatFeatures()

    def head(self, feats: torch.Tensor) -> torch.Tensor:
        return feats[:, :2]

    def forward(self, x):
        return self.head(self.features(x))


def _patch(seed: int = 0) -> Patch:
    rng = np.random.default_rng(seed)
    return Patch(rng.integers(60, 256, size=(320, 320, 3), dtype=np.uint8), (0, 0, 320, 320))


class TestGradcam:
    def test_output_contract(self):
        heat = gradcam(ToyModel(), _patch(), target_class=0)
        assert heat.shape == (320, 320)
        assert heat.min() >= 0.0 and heat.max() <= 1.0
        assert np.isfinite(heat).all()

    def test_quadrant_mass(self):
        heat = gradcam(ToyModel(), _patch(1), target_class=0)
        mass = heat.sum()
        assert mass > 0
        quadrant = heat[:160, :160].sum()
        assert quadrant / mass >= 0.5

    def test_zero_gradient_gives_all_zero(self):
        heat = gradcam(ConstantScoreModel(), _patch(2), target_class=0)
        assert np.all(heat == 0.0)

    def test_invariant_to_positive_score_scaling(self):
        patch = _patch(3)
        base = gradcam(ToyModel(scale=1.0), patch, target_class=0)
        scaled = gradcam(ToyModel(scale=7.5), patch, target_class=0)
        np.testing.assert_allclose(base, scaled, atol=1e-5)

    def test_no_spatial_extent_raises(self):
        with pytest.raises(NoConvFeatures):
            gradcam(FlatModel(), _patch(4), target_class=0)

    def test_real_backbone_produces_valid_map(self):
        torch.manual_seed(0)
        model = build_model(ModelConfig(backbone="small_cnn", pretrained=False))
        heat = gradcam(model, _patch(5), target_class=0)
        assert heat.shape == (320, 320)
        assert 0.0 <= heat.min() and heat.max() <= 1.0

    def test_named_layer_selection(self):
        torch.manual_seed(0)
        model = build_model(ModelConfig(backbone="small_cnn", pretrained=False))
        heat = gradcam(model, _patch(6), target_class=1, layer="features.4")
        assert heat.shape == (320, 320)


class TestOverlay:
    def test_opacity_zero_is_byte_identical(self):
        img = _patch(7).pixels
        out = overlay(img, np.random.default_rng(0).uniform(size=(320, 320)), opacity=0.0)
        assert np.array_equal(out, img)

    def test_golden_full_opacity_extremes(self):
        # Frozen renders of the documented jet colormap endpoints.
        img = np.full((4, 4, 3), 10, dtype=np.uint8)
        cold = overlay(img, np.zeros((4, 4)), opacity=1.0)
        assert np.array_equal(cold, np.full((4, 4, 3), (0, 0, 128), dtype=np.uint8))
        hot = overlay(img, np.ones((4, 4)), opacity=1.0)
        assert np.array_equal(hot, np.full((4, 4, 3), (128, 0, 0), dtype=np.uint8))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            overlay(np.zeros((4, 4, 3), dtype=np.uint8), np.zeros((5, 5)), 0.5)

    def test_invalid_opacity(self):
        with pytest.raises(ValueError):
            overlay(np.zeros((4, 4, 3), dtype=np.uint8), np.zeros((4, 4)), 1.5)


class TestComposite:
    def test_overlap_takes_maximum(self):
        a = np.full((10, 10), 0.3)
        b = np.full((10, 10), 0.8)
        canvas = composite_heatmap((20, 20), [(0, 0, 10, 10), (5, 5, 10, 10)], [a, b])
        assert canvas[7, 7] == pytest.approx(0.8)
        assert canvas[2, 2] == pytest.approx(0.3)
        assert canvas[18, 18] == 0.0

    def test_peak_maps_to_source_coordinates(self):
        heat = np.zeros((320, 320))
        heat[80, 160] = 1.0
        x, y = peak_coordinates(heat, (100, 200, 160, 160))
        assert abs(x - (100 + 160 * 160 / 320)) <= 1
        assert abs(y - (200 + 80 * 160 / 320)) <= 1


class TestExplainImage:
    def test_one_overlay_per_patch(self):
        torch.manual_seed(0)
        model = build_model(ModelConfig(backbone="small_cnn", pretrained=False))
        img = blob_image((512, 512), [(140, 140), (380, 380)], 60)
        prep = PreprocessOptions(normalize=False, patch_params=PatchParams(min_region_area=2000))
        explanation = explain_image(model, img, target_class=0, prep=prep)
        assert len(explanation.patch_overlays) == 2
        assert len(explanation.peaks) == 2
        assert explanation.composite_overlay.shape == img.shape
        summary = explanation.to_summary()
        assert summary["target_label"] == "abnormal"
        assert len(summary["patches"]) == 2
