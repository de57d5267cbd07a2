"""Cervical-gland histology screening pipeline.

Stain-normalized, patch-based classification of H&E gland images as normal
vs. abnormal, with threshold analysis, Grad-CAM explanations, and a review
service.
"""

from .corpus import CLASS_NAMES, LabeledSample, scan_corpus, stratified_split
from .evaluation import ConfusionMatrix, MetricsReport, confusion, metrics, threshold_sweep
from .models import ModelConfig, build_model, focal_loss, load_checkpoint, save_checkpoint
from .patches import AugmentConfig, Patch, PatchParams, augment, extract_patches, segment_tissue
from .pipeline import PreprocessOptions, load_image, prepare_patches
from .predict import PredictionResult, aggregate_probabilities, predict_image
from .stain import (
    DEFAULT_REFERENCE,
    StainModel,
    StainParams,
    estimate_stain_model,
    normalize_macenko,
)
from .training import RunManifest, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "CLASS_NAMES",
    "ConfusionMatrix",
    "DEFAULT_REFERENCE",
    "LabeledSample",
    "MetricsReport",
    "ModelConfig",
    "Patch",
    "PatchParams",
    "PredictionResult",
    "PreprocessOptions",
    "RunManifest",
    "StainModel",
    "StainParams",
    "TrainConfig",
    "aggregate_probabilities",
    "augment",
    "build_model",
    "confusion",
    "estimate_stain_model",
    "extract_patches",
    "focal_loss",
    "load_checkpoint",
    "load_image",
    "metrics",
    "normalize_macenko",
    "predict_image",
    "prepare_patches",
    "save_checkpoint",
    "scan_corpus",
    "segment_tissue",
    "stratified_split",
    "threshold_sweep",
    "train",
]
