"""Backbone + head patch classifier and the focal training objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision import models as tv_models

from .corpus import CLASS_NAMES
from .errors import UnknownBackbone

NUM_CLASSES = 2
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ModelConfig:
    """Backbone selection and head settings.

    ``efficientnet_b3`` is the deployment backbone (ImageNet-pretrained
    feature extractor); ``small_cnn`` is a from-scratch backbone sized for
    desk-scale tests and CPU smoke runs. The head is always global average
    pooling, dropout, and a single linear map to 2 logits.
    """

    backbone: str = "efficientnet_b3"
    pretrained: bool = True
    dropout: float = 0.3

    def to_dict(self) -> dict:
        return {"backbone": self.backbone, "pretrained": self.pretrained, "dropout": self.dropout}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class SmallCnnFeatures(nn.Sequential):
    """Four downsampling conv blocks; 320x320 input -> 64x10x10 features."""

    out_channels = 64

    def __init__(self) -> None:
        def block(c_in: int, c_out: int) -> list[nn.Module]:
            return [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
            ]

        super().__init__(
            *block(3, 16),
            *block(16, 32),
            nn.MaxPool2d(2),
            *block(32, 64),
            nn.MaxPool2d(2),
        )


class PatchClassifier(nn.Module):
    """Feature extractor plus GAP -> dropout -> linear head.

    ``features`` is exposed so the explainer can read the final
    convolutional maps and their gradients.
    """

    def __init__(self, features: nn.Module, feature_channels: int, dropout: float) -> None:
        super().__init__()
        self.features = features
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(feature_channels, NUM_CLASSES)

    def head(self, feature_maps: torch.Tensor) -> torch.Tensor:
        pooled = self.pool(feature_maps).flatten(1)
        return self.fc(self.dropout(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def build_model(cfg: ModelConfig) -> PatchClassifier:
    """Construct the classifier for the configured backbone.

    Raises:
        UnknownBackbone: the identifier is not registered.
    """
    if cfg.backbone == "efficientnet_b3":
        weights = tv_models.EfficientNet_B3_Weights.IMAGENET1K_V1 if cfg.pretrained else None
        net = tv_models.efficientnet_b3(weights=weights)
        feature_channels = net.classifier[1].in_features
        return PatchClassifier(net.features, feature_channels, cfg.dropout)
    if cfg.backbone == "small_cnn":
        return PatchClassifier(SmallCnnFeatures(), SmallCnnFeatures.out_channels, cfg.dropout)
    raise UnknownBackbone(f"unknown backbone {cfg.backbone!r}")


def focal_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    gamma: float = 2.0,
    alpha: torch.Tensor | tuple[float, float] | None = None,
    min_prob: float = 1e-12,
) -> torch.Tensor:
    """Mean of ``-alpha_t * (1 - p_t)^gamma * ln(p_t)`` over the batch.

    ``p_t`` is the softmax probability of the true class, floored at
    ``min_prob`` inside the log for numerical safety. With ``gamma == 0``
    and no alpha this reduces exactly to cross-entropy.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    log_probs = F.log_softmax(logits, dim=1)
    logp_t = log_probs.gather(1, targets.view(-1, 1)).squeeze(1)
    p_t = logp_t.exp()
    losses = -torch.pow(1.0 - p_t, gamma) * logp_t.clamp_min(math.log(min_prob))
    if alpha is not None:
        alpha_t = torch.as_tensor(alpha, dtype=losses.dtype, device=losses.device)[targets]
        losses = alpha_t * losses
    return losses.mean()


def save_checkpoint(path: Path | str, model: PatchClassifier, cfg: ModelConfig, extra: dict | None = None) -> None:
    """Serialize weights with the model config and class-order convention."""
    payload = {
        "state_dict": model.state_dict(),
        "model_config": cfg.to_dict(),
        "class_names": list(CLASS_NAMES),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: Path | str, device: str = "cpu") -> tuple[PatchClassifier, ModelConfig, dict]:
    """Rebuild a model from a checkpoint; asserts the class-order convention."""
    payload = torch.load(path, map_location=device, weights_only=False)
    if tuple(payload["class_names"]) != CLASS_NAMES:
        raise ValueError(
            f"checkpoint class order {payload['class_names']} != {list(CLASS_NAMES)}"
        )
    cfg = ModelConfig.from_dict(payload["model_config"])
    cfg_for_load = ModelConfig(cfg.backbone, pretrained=False, dropout=cfg.dropout)
    model = build_model(cfg_for_load)
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    model.eval()
    return model, cfg, payload.get("extra", {})
