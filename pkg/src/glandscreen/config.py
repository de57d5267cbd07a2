"""Single nested config covering every pipeline stage, JSON-backed.

Every field has a default; unknown keys in a config file are rejected so
typos fail loudly instead of silently running with defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .models import ModelConfig
from .patches import AugmentConfig, PatchParams
from .pipeline import PreprocessOptions
from .stain import DEFAULT_REFERENCE, StainModel, StainParams
from .training import TrainConfig

#: Balanced operating point reported for the published model; used when a
#: model manifest carries no balanced threshold of its own.
FALLBACK_BALANCED_THRESHOLD = 0.45


@dataclass(frozen=True)
class EvalConfig:
    grid_start: float = 0.0
    grid_stop: float = 1.0
    grid_step: float = 0.01

    def grid(self) -> np.ndarray:
        return np.round(
            np.arange(self.grid_start, self.grid_stop + self.grid_step / 2, self.grid_step), 10
        )


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    model_dir: str = "models"
    data_dir: str = "service_data"
    default_model: str | None = None
    default_threshold: float | None = None  # None -> manifest / fallback chain
    max_upload_bytes: int = 20 * 1024 * 1024
    frontend_dir: str | None = None


_TUPLE_FIELDS = {"angle_percentiles", "alpha"}


def _section_from_dict(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    kwargs = {
        k: tuple(v) if (k in _TUPLE_FIELDS and v is not None) else v for k, v in data.items()
    }
    return cls(**kwargs)


@dataclass(frozen=True)
class PipelineConfig:
    stain: StainParams = field(default_factory=StainParams)
    stain_enabled: bool = True
    reference_image: str | None = None  # fit the reference from this image
    patch: PatchParams = field(default_factory=PatchParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    _SECTIONS = {
        "stain": StainParams,
        "patch": PatchParams,
        "augment": AugmentConfig,
        "model": ModelConfig,
        "train": TrainConfig,
        "evaluate": EvalConfig,
        "service": ServiceConfig,
    }

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in self._SECTIONS}
        d["stain_enabled"] = self.stain_enabled
        d["reference_image"] = self.reference_image
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        scalar_keys = {"stain_enabled", "reference_image"}
        unknown = set(data) - set(cls._SECTIONS) - scalar_keys
        if unknown:
            raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in cls._SECTIONS.items():
            if name in data:
                kwargs[name] = _section_from_dict(section_cls, data[name], name)
        for key in scalar_keys:
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: Path | str) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def reference(self) -> StainModel:
        if self.reference_image:
            from .pipeline import load_image
            from .stain import fit_reference

            return fit_reference(load_image(self.reference_image), self.stain)
        return DEFAULT_REFERENCE

    def preprocess_options(self) -> PreprocessOptions:
        return PreprocessOptions(
            reference=self.reference(),
            stain_params=self.stain,
            patch_params=self.patch,
            normalize=self.stain_enabled,
        )


def preprocess_from_manifest_configs(configs: dict) -> PreprocessOptions:
    """Rebuild inference preprocessing from a training manifest's configs.

    Falls back to package defaults for anything the manifest lacks, so
    checkpoints without manifests stay usable.
    """
    stain = _section_from_dict(StainParams, configs.get("stain", {}), "stain")
    patch = _section_from_dict(PatchParams, configs.get("patch", {}), "patch")
    reference = (
        StainModel.from_dict(configs["stain_reference"])
        if configs.get("stain_reference")
        else DEFAULT_REFERENCE
    )
    return PreprocessOptions(
        reference=reference,
        stain_params=stain,
        patch_params=patch,
        normalize=bool(configs.get("stain_enabled", True)),
    )
