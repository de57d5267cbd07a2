"""Two-class image corpus scanning, stratified splitting, and sample weights.

The expected layout is ``root/normal/*`` and ``root/abnormal/*``; a custom
folder-to-label mapping may be supplied for other layouts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyClass

log = logging.getLogger(__name__)

#: Fixed class-index convention used throughout training and serialization.
CLASS_NAMES = ("abnormal", "normal")
ABNORMAL, NORMAL = 0, 1

DEFAULT_FOLDER_LABELS = {"normal": "normal", "abnormal": "abnormal"}


@dataclass(frozen=True)
class LabeledSample:
    path: Path
    label: str  # "normal" | "abnormal"
    split: str = "unassigned"  # "train" | "val" | "unassigned"

    @property
    def label_index(self) -> int:
        return CLASS_NAMES.index(self.label)


@dataclass(frozen=True)
class CorpusSummary:
    counts: dict  # {split: {label: count}}
    total: int

    @classmethod
    def of(cls, samples: list["LabeledSample"]) -> "CorpusSummary":
        counts: dict = {}
        for s in samples:
            counts.setdefault(s.split, {}).setdefault(s.label, 0)
            counts[s.split][s.label] += 1
        return cls(counts=counts, total=len(samples))


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def scan_corpus(
    root: Path | str, folder_labels: dict[str, str] | None = None
) -> list[LabeledSample]:
    """One sample per decodable image, labeled by parent directory.

    Undecodable files are skipped with a warning. Output is ordered
    lexicographically by path so scans are deterministic.

    Raises:
        EmptyClass: a class directory exists but holds no decodable image,
            or is missing entirely.
    """
    root = Path(root)
    folder_labels = folder_labels or DEFAULT_FOLDER_LABELS
    samples: list[LabeledSample] = []
    skipped = 0
    for folder, label in sorted(folder_labels.items()):
        class_dir = root / folder
        files = sorted(p for p in class_dir.glob("*") if p.is_file()) if class_dir.is_dir() else []
        decoded = 0
        for path in files:
            if _is_decodable(path):
                samples.append(LabeledSample(path=path, label=label))
                decoded += 1
            else:
                skipped += 1
                log.warning("skipping undecodable file: %s", path)
        if decoded == 0:
            raise EmptyClass(f"no decodable images under {class_dir}")
    if skipped:
        log.warning("skipped %d undecodable files under %s", skipped, root)
    samples.sort(key=lambda s: str(s.path))
    return samples


def stratified_split(
    samples: list[LabeledSample], train_fraction: float = 0.8, seed: int = 42
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Per-class split: floor(fraction * n) to train, remainder to validation.

    Selection is by seeded shuffle within each class; the result is a
    deterministic partition of the input.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    labels = {s.label for s in samples}
    if len(labels) < 2:
        raise ValueError(f"both classes required for a stratified split, got {labels}")

    rng = np.random.default_rng(seed)
    train: list[LabeledSample] = []
    val: list[LabeledSample] = []
    for label in CLASS_NAMES:
        members = [s for s in samples if s.label == label]
        order = rng.permutation(len(members))
        n_train = int(np.floor(train_fraction * len(members)))
        chosen = set(order[:n_train].tolist())
        for idx, sample in enumerate(members):
            target = train if idx in chosen else val
            split = "train" if idx in chosen else "val"
            target.append(LabeledSample(sample.path, sample.label, split))
    return train, val


def sampler_weights(samples: list[LabeledSample]) -> np.ndarray:
    """Per-sample weights inversely proportional to class frequency.

    Drawing with replacement proportionally to these weights yields each
    class with probability 1/2 in expectation.
    """
    labels = [s.label for s in samples]
    return class_balance_weights(labels)


def class_balance_weights(labels: list[str]) -> np.ndarray:
    counts = {label: labels.count(label) for label in set(labels)}
    if len(counts) < 2:
        raise ValueError(f"both classes required for balanced sampling, got {set(labels)}")
    return np.array([1.0 / counts[label] for label in labels], dtype=np.float64)


def write_split_file(
    path: Path | str, train: list[LabeledSample], val: list[LabeledSample], seed: int
) -> None:
    """Persist the split contract consumed by training and evaluation."""
    payload = {
        "seed": seed,
        "class_names": list(CLASS_NAMES),
        "samples": [
            {"path": str(s.path), "label": s.label, "split": s.split}
            for s in train + val
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def read_split_file(path: Path | str) -> tuple[list[LabeledSample], list[LabeledSample]]:
    payload = json.loads(Path(path).read_text())
    if tuple(payload["class_names"]) != CLASS_NAMES:
        raise ValueError(f"split file class order {payload['class_names']} != {CLASS_NAMES}")
    train = [
        LabeledSample(Path(e["path"]), e["label"], e["split"])
        for e in payload["samples"]
        if e["split"] == "train"
    ]
    val = [
        LabeledSample(Path(e["path"]), e["label"], e["split"])
        for e in payload["samples"]
        if e["split"] == "val"
    ]
    return train, val
