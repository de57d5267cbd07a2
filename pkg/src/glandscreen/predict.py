"""Per-patch inference and whole-image probability aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import ABNORMAL, CLASS_NAMES
from .models import IMAGENET_MEAN, IMAGENET_STD, PatchClassifier
from .patches import Patch
from .pipeline import PreprocessOptions, prepare_patches

_MEAN = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
_STD = torch.tensor(IMAGENET_STD).view(3, 1, 1)


@dataclass
class PredictionResult:
    """Per-patch probabilities, their mean, and the thresholded label."""

    patch_probabilities: np.ndarray  # n x 2, class order (abnormal, normal)
    aggregate: np.ndarray  # length 2
    threshold: float
    label: str
    patch_bboxes: list[tuple[int, int, int, int]]
    patch_fallback: bool
    stain_fallback: bool

    @property
    def abnormal_probability(self) -> float:
        return float(self.aggregate[ABNORMAL])

    def to_dict(self) -> dict:
        return {
            "class_names": list(CLASS_NAMES),
            "patch_probabilities": self.patch_probabilities.tolist(),
            "aggregate": self.aggregate.tolist(),
            "abnormal_probability": self.abnormal_probability,
            "threshold": self.threshold,
            "label": self.label,
            "patch_bboxes": [list(b) for b in self.patch_bboxes],
            "patch_fallback": self.patch_fallback,
            "stain_fallback": self.stain_fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionResult":
        return cls(
            patch_probabilities=np.asarray(d["patch_probabilities"], dtype=np.float64),
            aggregate=np.asarray(d["aggregate"], dtype=np.float64),
            threshold=float(d["threshold"]),
            label=d["label"],
            patch_bboxes=[tuple(b) for b in d["patch_bboxes"]],
            patch_fallback=bool(d["patch_fallback"]),
            stain_fallback=bool(d["stain_fallback"]),
        )


def patch_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 -> normalized float CHW tensor (ImageNet statistics)."""
    tensor = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).float() / 255.0
    return (tensor - _MEAN) / _STD


def predict_pixel_arrays(
    model: PatchClassifier, arrays: list[np.ndarray], device: str = "cpu", batch_size: int = 16
) -> np.ndarray:
    """Softmax class probabilities for raw uint8 patch arrays (n x 2 float64)."""
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(arrays), batch_size):
            batch = torch.stack(
                [patch_to_tensor(a) for a in arrays[start : start + batch_size]]
            ).to(device)
            probs.append(torch.softmax(model(batch), dim=1).cpu().double().numpy())
    return np.concatenate(probs, axis=0)


def predict_patches(
    model: PatchClassifier, patches: list[Patch], device: str = "cpu", batch_size: int = 16
) -> np.ndarray:
    """Softmax class probabilities for each patch (n x 2 float64)."""
    return predict_pixel_arrays(model, [p.pixels for p in patches], device, batch_size)


def aggregate_probabilities(patch_probs: np.ndarray) -> np.ndarray:
    """Whole-image probability vector: the arithmetic mean over patches."""
    patch_probs = np.asarray(patch_probs, dtype=np.float64)
    if patch_probs.ndim != 2 or patch_probs.shape[0] == 0:
        raise ValueError("expected a non-empty n x 2 probability array")
    return patch_probs.mean(axis=0)


def label_for(abnormal_probability: float, threshold: float) -> str:
    """Screening decision rule: abnormal when probability >= threshold."""
    return CLASS_NAMES[ABNORMAL] if abnormal_probability >= threshold else "normal"


def predict_image(
    model: PatchClassifier,
    img: np.ndarray,
    prep: PreprocessOptions = PreprocessOptions(),
    threshold: float = 0.5,
    device: str = "cpu",
    source_id: str = "",
) -> PredictionResult:
    """Full pipeline for one image: normalize, patch, classify, aggregate."""
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    patches, stain_fallback = prepare_patches(img, prep, source_id=source_id)
    patch_probs = predict_patches(model, patches, device=device)
    aggregate = aggregate_probabilities(patch_probs)
    return PredictionResult(
        patch_probabilities=patch_probs,
        aggregate=aggregate,
        threshold=threshold,
        label=label_for(float(aggregate[ABNORMAL]), threshold),
        patch_bboxes=[p.source_bbox for p in patches],
        patch_fallback=any(p.is_fallback for p in patches),
        stain_fallback=stain_fallback,
    )
