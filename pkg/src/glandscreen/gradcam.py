"""Gradient-weighted class activation maps and overlay rendering."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps

from .corpus import CLASS_NAMES
from .errors import DimensionMismatch, NoConvFeatures
from .patches import Patch
from .pipeline import PreprocessOptions, prepare_patches
from .predict import patch_to_tensor

#: Colormap used by every overlay render; jet(0) is dark blue, jet(1) dark red.
OVERLAY_COLORMAP = "jet"


def gradcam(
    model,
    patch: Patch | np.ndarray,
    target_class: int,
    device: str = "cpu",
    layer: str | None = None,
) -> np.ndarray:
    """Class activation heatmap in [0, 1] at the patch's own resolution.

    Channel weights are the spatial means of the target-class score gradient
    over the final convolutional maps (or a named submodule's output); the
    weighted sum is rectified, bilinearly upsampled, and divided by its max.
    A score with no feature dependence yields the all-zero map.

    Raises:
        NoConvFeatures: the selected layer output has no spatial extent.
    """
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    model.eval()
    x = patch_to_tensor(pixels).unsqueeze(0).to(device).requires_grad_(True)

    with torch.enable_grad():
        if layer is None:
            feature_maps = model.features(x)
            logits = model.head(feature_maps)
        else:
            captured: list[torch.Tensor] = []
            handle = model.get_submodule(layer).register_forward_hook(
                lambda _m, _i, out: captured.append(out)
            )
            try:
                logits = model(x)
            finally:
                handle.remove()
            feature_maps = captured[-1]
        if feature_maps.ndim != 4:
            raise NoConvFeatures(
                f"explanation layer produced shape {tuple(feature_maps.shape)}; "
                "expected batch x channels x height x width"
            )
        score = logits[0, target_class]
        if score.requires_grad:
            grads = torch.autograd.grad(score, feature_maps, allow_unused=True)[0]
        else:  # score is constant w.r.t. the input
            grads = None

    if grads is None:
        return np.zeros(pixels.shape[:2], dtype=np.float64)

    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * feature_maps).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=pixels.shape[:2], mode="bilinear", align_corners=False)
    cam = cam[0, 0].detach().cpu().double().numpy()
    peak = cam.max()
    if peak > 0:
        cam /= peak
    return cam


def overlay(img: np.ndarray, heatmap: np.ndarray, opacity: float) -> np.ndarray:
    """Blend the colormapped heatmap onto the image; opacity 0 is a no-op."""
    img = np.asarray(img)
    heatmap = np.asarray(heatmap, dtype=np.float64)
    if img.shape[:2] != heatmap.shape:
        raise DimensionMismatch(f"image {img.shape[:2]} vs heatmap {heatmap.shape}")
    if not 0 <= opacity <= 1:
        raise ValueError("opacity must lie in [0, 1]")
    colored = colormaps[OVERLAY_COLORMAP](heatmap)[..., :3] * 255.0
    blended = (1.0 - opacity) * img.astype(np.float64) + opacity * colored
    return np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)


def composite_heatmap(
    shape: tuple[int, int],
    bboxes: list[tuple[int, int, int, int]],
    heatmaps: list[np.ndarray],
) -> np.ndarray:
    """Patch heatmaps rendered into source bboxes; overlaps take the maximum."""
    canvas = np.zeros(shape, dtype=np.float64)
    for (x, y, w, h), heatmap in zip(bboxes, heatmaps):
        resized = cv2.resize(heatmap, (w, h), interpolation=cv2.INTER_LINEAR)
        canvas[y : y + h, x : x + w] = np.maximum(canvas[y : y + h, x : x + w], resized)
    return canvas


def peak_coordinates(heatmap: np.ndarray, bbox: tuple[int, int, int, int]) -> tuple[int, int]:
    """Source-image (x, y) of the heatmap's maximum activation."""
    r, c = np.unravel_index(int(np.argmax(heatmap)), heatmap.shape)
    x, y, w, h = bbox
    return (
        int(round(x + c * w / heatmap.shape[1])),
        int(round(y + r * h / heatmap.shape[0])),
    )


@dataclass
class Explanation:
    """Per-patch overlays plus the whole-image composite."""

    target_class: int
    patch_overlays: list[np.ndarray]
    patch_bboxes: list[tuple[int, int, int, int]]
    peaks: list[tuple[int, int]]
    composite_overlay: np.ndarray

    def to_summary(self) -> dict:
        return {
            "target_class": self.target_class,
            "target_label": CLASS_NAMES[self.target_class],
            "patches": [
                {"bbox": list(bbox), "peak_xy": list(peak)}
                for bbox, peak in zip(self.patch_bboxes, self.peaks)
            ],
        }


def explain_image(
    model,
    img: np.ndarray,
    target_class: int,
    prep: PreprocessOptions = PreprocessOptions(),
    opacity: float = 0.4,
    device: str = "cpu",
    layer: str | None = None,
) -> Explanation:
    """Grad-CAM overlays for every patch of an image plus a composite view.

    Patch extraction repeats the prediction pipeline, so overlays line up
    with the patches that produced the classification.
    """
    patches, _ = prepare_patches(img, prep)
    heatmaps = [gradcam(model, p, target_class, device=device, layer=layer) for p in patches]
    composite = composite_heatmap(img.shape[:2], [p.source_bbox for p in patches], heatmaps)
    return Explanation(
        target_class=target_class,
        patch_overlays=[overlay(p.pixels, h, opacity) for p, h in zip(patches, heatmaps)],
        patch_bboxes=[p.source_bbox for p in patches],
        peaks=[peak_coordinates(h, p.source_bbox) for h, p in zip(heatmaps, patches)],
        composite_overlay=overlay(img, composite, opacity),
    )
