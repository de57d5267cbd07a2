"""Shared image-to-patches preprocessing used by training, inference, and CLI."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import GlandScreenError
from .patches import Patch, PatchParams, extract_patches, segment_tissue
from .stain import DEFAULT_REFERENCE, StainModel, StainParams, normalize_macenko

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessOptions:
    """Stain and patch settings applied ahead of every model call.

    Normalization runs on the whole image before patch extraction; when it
    fails (background-only or degenerate stains) the unnormalized image is
    used and the result is flagged.
    """

    reference: StainModel = field(default_factory=lambda: DEFAULT_REFERENCE)
    stain_params: StainParams = field(default_factory=StainParams)
    patch_params: PatchParams = field(default_factory=PatchParams)
    normalize: bool = True


def load_image(path: Path | str) -> np.ndarray:
    """Decode an image file to HxWx3 uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def prepare_patches(
    img: np.ndarray, prep: PreprocessOptions, source_id: str = ""
) -> tuple[list[Patch], bool]:
    """Normalize (with pass-through fallback) and crop tissue patches.

    Returns the patches and whether stain normalization fell back to the
    unmodified image.
    """
    stain_fallback = False
    if prep.normalize:
        try:
            img = normalize_macenko(img, prep.reference, prep.stain_params)
        except GlandScreenError as exc:
            stain_fallback = True
            log.warning("stain normalization fell back for %s: %s", source_id or "image", exc)
    mask = segment_tissue(img, prep.patch_params)
    patches = extract_patches(img, mask, prep.patch_params, source_id=source_id)
    return patches, stain_fallback
