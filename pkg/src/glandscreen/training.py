"""Weighted-sampler focal-loss training with whole-image validation.

Each epoch draws patch indices with class-balancing weights, minimizes the
focal objective with AdamW, and scores the validation set at the whole-image
level (patch-probability mean). The checkpoint with the best validation
macro-F1 is kept; after training the validation sweep's balanced threshold
is recorded for deployment.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import ABNORMAL, CLASS_NAMES, LabeledSample, class_balance_weights
from .errors import DivergedTraining
from .evaluation import MetricsReport, confusion, metrics, threshold_sweep
from .models import ModelConfig, build_model, focal_loss, load_checkpoint, save_checkpoint
from .patches import AugmentConfig, Patch, augment
from .pipeline import PreprocessOptions, load_image, prepare_patches
from .predict import aggregate_probabilities, label_for, patch_to_tensor, predict_pixel_arrays


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; class order is fixed as (abnormal, normal)."""

    gamma: float = 2.0
    alpha: tuple[float, float] | None = None
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 16
    max_epochs: int = 30
    patience: int = 5
    seed: int = 42
    threshold: float = 0.5  # training-time metric threshold
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.gamma < 0 or self.learning_rate <= 0:
            raise ValueError("gamma must be >= 0 and learning_rate > 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = list(self.alpha) if self.alpha is not None else None
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_macro_f1: float
    val_f1_abnormal: float
    val_f1_normal: float
    sampler_digest: str


@dataclass
class RunManifest:
    """Everything needed to reproduce and deploy a training run."""

    configs: dict
    class_names: list[str]
    epochs: list[EpochRecord]
    best_epoch: int
    selection_rule: str
    checkpoint: str
    seeds: dict
    balanced_threshold: float
    wall_clock_seconds: float

    def best_record(self) -> EpochRecord:
        for record in self.epochs:
            if record.epoch == self.best_epoch:
                return record
        raise ValueError(f"best epoch {self.best_epoch} missing from epoch table")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Path | str) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        d["epochs"] = [EpochRecord(**e) for e in d["epochs"]]
        return cls(**d)


@dataclass
class _Entry:
    data: np.ndarray | Path
    label_index: int
    image_index: int


class PatchDataset:
    """Patches extracted once from labeled images, grouped per source image.

    With a ``cache_dir`` the patches live on disk as PNGs (reused across
    runs); otherwise they stay in memory. Augmentation, when configured,
    draws from a dedicated generator so runs are reproducible.
    """

    def __init__(
        self,
        samples: list[LabeledSample],
        prep: PreprocessOptions,
        augment_cfg: AugmentConfig | None = None,
        cache_dir: Path | str | None = None,
    ) -> None:
        import cv2

        self.augment_cfg = augment_cfg
        self.rng = np.random.default_rng(augment_cfg.seed) if augment_cfg else None
        self.entries: list[_Entry] = []
        self.image_labels: list[int] = []
        self.stain_fallbacks = 0
        cache_dir = Path(cache_dir) if cache_dir else None
        if cache_dir:
            cache_dir.mkdir(parents=True, exist_ok=True)

        for image_index, sample in enumerate(samples):
            self.image_labels.append(sample.label_index)
            stem = f"{image_index:05d}_{Path(sample.path).stem}"
            cached = sorted(cache_dir.glob(f"{stem}_p*.png")) if cache_dir else []
            if cached:
                for path in cached:
                    self.entries.append(_Entry(path, sample.label_index, image_index))
                continue
            img = load_image(sample.path)
            patches, fallback = prepare_patches(img, prep, source_id=stem)
            self.stain_fallbacks += int(fallback)
            for k, patch in enumerate(patches):
                if cache_dir:
                    path = cache_dir / f"{stem}_p{k}.png"
                    cv2.imwrite(str(path), cv2.cvtColor(patch.pixels, cv2.COLOR_RGB2BGR))
                    self.entries.append(_Entry(path, sample.label_index, image_index))
                else:
                    self.entries.append(_Entry(patch.pixels, sample.label_index, image_index))

    def __len__(self) -> int:
        return len(self.entries)

    def patch_pixels(self, i: int) -> np.ndarray:
        data = self.entries[i].data
        if isinstance(data, Path):
            import cv2

            return cv2.cvtColor(cv2.imread(str(data)), cv2.COLOR_BGR2RGB)
        return data

    def training_tensor(self, i: int) -> torch.Tensor:
        pixels = self.patch_pixels(i)
        if self.augment_cfg is not None:
            patch = augment(Patch(pixels, (0, 0, 0, 0)), self.augment_cfg, self.rng)
            pixels = patch.pixels
        return patch_to_tensor(pixels)

    def entry_labels(self) -> list[str]:
        return [CLASS_NAMES[e.label_index] for e in self.entries]

    def by_image(self) -> list[tuple[int, list[int]]]:
        """(label_index, entry ids) per source image, in sample order."""
        groups: dict[int, list[int]] = {}
        for i, entry in enumerate(self.entries):
            groups.setdefault(entry.image_index, []).append(i)
        return [(self.image_labels[idx], ids) for idx, ids in sorted(groups.items())]


def draw_epoch_indices(weights: np.ndarray, n_draws: int, seed: int, epoch: int) -> np.ndarray:
    """Replacement sampling proportional to weights; deterministic per (seed, epoch)."""
    rng = np.random.default_rng([seed, epoch])
    return rng.choice(len(weights), size=n_draws, replace=True, p=weights / weights.sum())


def _digest(indices: np.ndarray) -> str:
    return hashlib.sha256(indices.astype(np.int64).tobytes()).hexdigest()[:16]


def evaluate_whole_images(
    model, dataset: PatchDataset, threshold: float, device: str = "cpu"
) -> tuple[np.ndarray, list[str], MetricsReport]:
    """Aggregate patch probabilities per image and score against labels."""
    abnormal_probs = []
    actual = []
    predicted = []
    for label_index, entry_ids in dataset.by_image():
        arrays = [dataset.patch_pixels(i) for i in entry_ids]
        probs = predict_pixel_arrays(model, arrays, device=device)
        aggregate = aggregate_probabilities(probs)
        abnormal_probs.append(float(aggregate[ABNORMAL]))
        actual.append(CLASS_NAMES[label_index])
        predicted.append(label_for(abnormal_probs[-1], threshold))
    report = metrics(confusion(predicted, actual))
    return np.array(abnormal_probs), actual, report


def train(
    train_samples: list[LabeledSample],
    val_samples: list[LabeledSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    prep: PreprocessOptions = PreprocessOptions(),
    augment_cfg: AugmentConfig | None = AugmentConfig(),
    out_dir: Path | str = "runs/latest",
    cache_dir: Path | str | None = None,
    log_fn=print,
) -> RunManifest:
    """Run the full training loop and return the manifest.

    Raises:
        DivergedTraining: the focal loss became non-finite.
    """
    if not train_samples or not val_samples:
        raise ValueError("train and validation sets must be non-empty")
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    device = train_cfg.device
    torch.manual_seed(train_cfg.seed)

    train_ds = PatchDataset(train_samples, prep, augment_cfg, cache_dir=cache_dir)
    val_ds = PatchDataset(val_samples, prep, None, cache_dir=cache_dir)
    weights = class_balance_weights(train_ds.entry_labels())

    model = build_model(model_cfg).to(device)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay
    )
    alpha = train_cfg.alpha

    checkpoint_path = out_dir / "model.pt"
    records: list[EpochRecord] = []
    best_score = -math.inf
    best_epoch = -1
    patience_left = train_cfg.patience

    for epoch in range(train_cfg.max_epochs):
        indices = draw_epoch_indices(weights, len(train_ds), train_cfg.seed, epoch)
        model.train()
        losses = []
        for start in range(0, len(indices), train_cfg.batch_size):
            batch_ids = indices[start : start + train_cfg.batch_size]
            x = torch.stack([train_ds.training_tensor(i) for i in batch_ids]).to(device)
            y = torch.tensor([train_ds.entries[i].label_index for i in batch_ids], device=device)
            optimizer.zero_grad()
            loss = focal_loss(model(x), y, gamma=train_cfg.gamma, alpha=alpha)
            if not torch.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            losses.append(loss.item())

        _, _, report = evaluate_whole_images(model, val_ds, train_cfg.threshold, device)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_accuracy=report.accuracy,
            val_macro_f1=report.macro_f1,
            val_f1_abnormal=report.abnormal.f1,
            val_f1_normal=report.normal.f1,
            sampler_digest=_digest(indices),
        )
        records.append(record)
        log_fn(
            f"epoch {epoch}: loss {record.train_loss:.4f} "
            f"val acc {record.val_accuracy:.4f} macro-F1 {record.val_macro_f1:.4f}"
        )

        if report.macro_f1 > best_score:
            best_score = report.macro_f1
            best_epoch = epoch
            patience_left = train_cfg.patience
            save_checkpoint(checkpoint_path, model, model_cfg, extra={"best_epoch": epoch})
        else:
            patience_left -= 1
            if patience_left <= 0:
                log_fn(f"early stop at epoch {epoch} (best {best_epoch})")
                break

    # Deployment threshold: balanced point of the best checkpoint's val sweep.
    model, _, _ = load_checkpoint(checkpoint_path, device=device)
    probs, actual, _ = evaluate_whole_images(model, val_ds, train_cfg.threshold, device)
    sweep = threshold_sweep(probs, actual)
    save_checkpoint(
        checkpoint_path,
        model,
        model_cfg,
        extra={"best_epoch": best_epoch, "balanced_threshold": sweep.balanced_threshold},
    )

    manifest = RunManifest(
        configs={
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "stain": asdict(prep.stain_params),
            "stain_reference": prep.reference.to_dict(),
            "stain_enabled": prep.normalize,
            "patch": asdict(prep.patch_params),
            "augment": asdict(augment_cfg) if augment_cfg else None,
        },
        class_names=list(CLASS_NAMES),
        epochs=records,
        best_epoch=best_epoch,
        selection_rule="max val_macro_f1",
        checkpoint=str(checkpoint_path),
        seeds={"train": train_cfg.seed, "augment": augment_cfg.seed if augment_cfg else None},
        balanced_threshold=sweep.balanced_threshold,
        wall_clock_seconds=time.time() - started,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
