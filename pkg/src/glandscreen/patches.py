"""Glandular region isolation, patch cropping, and training augmentations.

Stained tissue is separated from the white slide background by HSV
thresholding (saturated and darker than background) followed by
morphological opening and closing. Connected regions become square
patches resized to a fixed side length; an image with no qualifying
region falls back to one whole-image patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class PatchParams:
    """Segmentation and cropping tunables.

    Thresholds are fractions of full scale; radii and areas are in pixels.
    """

    saturation_threshold: float = 0.08
    value_ceiling: float = 0.95
    open_radius: int = 5
    close_radius: int = 5
    min_region_area: int = 5000
    max_patches: int = 8
    patch_size: int = 320

    def __post_init__(self) -> None:
        if not (0 <= self.saturation_threshold <= 1 and 0 <= self.value_ceiling <= 1):
            raise ValueError("HSV thresholds must lie in [0, 1]")
        if self.open_radius < 0 or self.close_radius < 0:
            raise ValueError("morphology radii must be >= 0")
        if self.min_region_area < 1 or self.max_patches < 1 or self.patch_size < 1:
            raise ValueError("area, patch count, and size must be positive")


@dataclass
class Patch:
    """A square crop of glandular tissue in source-image coordinates."""

    pixels: np.ndarray
    source_bbox: tuple[int, int, int, int]  # (x, y, w, h)
    source_id: str = ""
    is_fallback: bool = False

    def to_manifest_entry(self) -> dict:
        return {
            "source_id": self.source_id,
            "bbox": list(self.source_bbox),
            "fallback": self.is_fallback,
        }


@dataclass(frozen=True)
class AugmentConfig:
    """Training-time augmentation switches, magnitudes, and rng seed."""

    hflip: bool = True
    vflip: bool = True
    rotate: bool = True
    rotate_limit_deg: float = 30.0
    shift_scale_rotate: bool = True
    shift_limit: float = 0.10
    scale_limit: float = 0.10
    ssr_rotate_limit_deg: float = 15.0
    brightness_contrast: bool = True
    brightness_limit: float = 0.20
    contrast_limit: float = 0.20
    probability: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.probability <= 1:
            raise ValueError("probability must lie in [0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(
            hflip=False,
            vflip=False,
            rotate=False,
            shift_scale_rotate=False,
            brightness_contrast=False,
        )


def _ellipse_kernel(radius: int) -> np.ndarray:
    size = 2 * radius + 1
    return cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (size, size))


def segment_tissue(img: np.ndarray, params: PatchParams = PatchParams()) -> np.ndarray:
    """Boolean tissue mask: saturated, non-white pixels, morphologically cleaned."""
    hsv = cv2.cvtColor(np.ascontiguousarray(img), cv2.COLOR_RGB2HSV)
    sat = hsv[:, :, 1].astype(np.float64) / 255.0
    val = hsv[:, :, 2].astype(np.float64) / 255.0
    mask = ((sat >= params.saturation_threshold) & (val <= params.value_ceiling)).astype(
        np.uint8
    )
    if params.open_radius > 0:
        mask = cv2.morphologyEx(mask, cv2.MORPH_OPEN, _ellipse_kernel(params.open_radius))
    if params.close_radius > 0:
        mask = cv2.morphologyEx(mask, cv2.MORPH_CLOSE, _ellipse_kernel(params.close_radius))
    return mask.astype(bool)


def _square_crop_bounds(
    x: int, y: int, w: int, h: int, img_w: int, img_h: int
) -> tuple[int, int, int, int]:
    """Expand a bbox to a square about its center, clamped to image bounds."""
    side = max(w, h)
    cx = x + w / 2.0
    cy = y + h / 2.0
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    x0 = max(0, min(x0, img_w - min(side, img_w)))
    y0 = max(0, min(y0, img_h - min(side, img_h)))
    return x0, y0, min(side, img_w - x0), min(side, img_h - y0)


def extract_patches(
    img: np.ndarray,
    mask: np.ndarray,
    params: PatchParams = PatchParams(),
    source_id: str = "",
) -> list[Patch]:
    """Crop one resized square patch per qualifying tissue region.

    Regions are connected mask components with at least ``min_region_area``
    pixels, largest first (ties by top-left corner), truncated at
    ``max_patches``. With no qualifying region the whole image becomes a
    single patch flagged as fallback.
    """
    img_h, img_w = img.shape[:2]
    if mask.shape[:2] != (img_h, img_w):
        raise DimensionMismatch(f"mask {mask.shape[:2]} does not match image {(img_h, img_w)}")

    size = params.patch_size
    n_labels, _, stats, _ = cv2.connectedComponentsWithStats(
        mask.astype(np.uint8), connectivity=8
    )
    regions = []
    for label in range(1, n_labels):
        area = int(stats[label, cv2.CC_STAT_AREA])
        if area < params.min_region_area:
            continue
        x = int(stats[label, cv2.CC_STAT_LEFT])
        y = int(stats[label, cv2.CC_STAT_TOP])
        w = int(stats[label, cv2.CC_STAT_WIDTH])
        h = int(stats[label, cv2.CC_STAT_HEIGHT])
        regions.append((area, y, x, w, h))
    regions.sort(key=lambda r: (-r[0], r[1], r[2]))

    if not regions:
        pixels = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
        return [
            Patch(pixels, (0, 0, img_w, img_h), source_id=source_id, is_fallback=True)
        ]

    patches = []
    for _, y, x, w, h in regions[: params.max_patches]:
        x0, y0, cw, ch = _square_crop_bounds(x, y, w, h, img_w, img_h)
        crop = img[y0 : y0 + ch, x0 : x0 + cw]
        pixels = cv2.resize(crop, (size, size), interpolation=cv2.INTER_LINEAR)
        patches.append(Patch(pixels, (x0, y0, cw, ch), source_id=source_id))
    return patches


def _affine(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    return cv2.warpAffine(
        img, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101
    )


def augment(patch: Patch, cfg: AugmentConfig, rng: np.random.Generator) -> Patch:
    """Apply the enabled transforms, each gated by ``cfg.probability``.

    All randomness flows through the caller-supplied generator, so a fixed
    seed reproduces the output byte for byte. Training-only; validation and
    inference never call this.
    """
    out = patch.pixels
    h, w = out.shape[:2]
    center = ((w - 1) / 2.0, (h - 1) / 2.0)

    if cfg.hflip and rng.uniform() < cfg.probability:
        out = np.fliplr(out)
    if cfg.vflip and rng.uniform() < cfg.probability:
        out = np.flipud(out)
    if cfg.rotate and rng.uniform() < cfg.probability:
        angle = rng.uniform(-cfg.rotate_limit_deg, cfg.rotate_limit_deg)
        out = _affine(out, cv2.getRotationMatrix2D(center, angle, 1.0))
    if cfg.shift_scale_rotate and rng.uniform() < cfg.probability:
        angle = rng.uniform(-cfg.ssr_rotate_limit_deg, cfg.ssr_rotate_limit_deg)
        scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit)
        matrix = cv2.getRotationMatrix2D(center, angle, scale)
        matrix[0, 2] += rng.uniform(-cfg.shift_limit, cfg.shift_limit) * w
        matrix[1, 2] += rng.uniform(-cfg.shift_limit, cfg.shift_limit) * h
        out = _affine(out, matrix)
    if cfg.brightness_contrast and rng.uniform() < cfg.probability:
        brightness = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit)
        contrast = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
        shifted = (out.astype(np.float64) - 127.5) * contrast + 127.5 + 255.0 * brightness
        out = np.clip(np.floor(shifted + 0.5), 0, 255).astype(np.uint8)

    return Patch(
        np.ascontiguousarray(out),
        patch.source_bbox,
        source_id=patch.source_id,
        is_fallback=patch.is_fallback,
    )
