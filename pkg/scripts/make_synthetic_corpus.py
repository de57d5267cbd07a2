#!/usr/bin/env python3
"""Generate a synthetic two-class demo corpus (no real data required).

Abnormal images carry purple-hued blobs, normal images pink-hued ones, so a
small backbone can learn the separation in a few CPU epochs. Useful for
exercising the full pipeline (split / train / evaluate / serve) end to end.
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image

CLASS_COLORS = {"abnormal": (140, 60, 180), "normal": (230, 130, 160)}


def make_image(rng: np.random.Generator, base_color, size: int) -> np.ndarray:
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    rr, cc = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(1, 3))):
        radius = int(rng.integers(45, 75))
        row, col = rng.integers(radius + 5, size - radius - 5, size=2)
        color = np.clip(
            np.array(base_color) + rng.integers(-20, 21, size=3), 30, 245
        )
        img[(rr - row) ** 2 + (cc - col) ** 2 <= radius**2] = color
    noise = rng.integers(-8, 9, size=img.shape)
    return np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_corpus")
    parser.add_argument("--per-class", type=int, default=100)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    for label, color in CLASS_COLORS.items():
        class_dir = Path(args.out) / label
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(args.per_class):
            Image.fromarray(make_image(rng, color, args.size)).save(
                class_dir / f"{label}_{i:04d}.png"
            )
    print(f"wrote {2 * args.per_class} images under {args.out}/")


if __name__ == "__main__":
    main()
