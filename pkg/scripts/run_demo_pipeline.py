#!/usr/bin/env python3
"""End-to-end demo: synthesize a corpus, train a small model, evaluate it.

Everything goes through the real CLI surface, so the run also doubles as a
smoke test of the command wiring. Stain normalization is disabled because
the synthetic blobs are separable by raw color.
"""

import argparse
import subprocess
import sys
from pathlib import Path

SCRIPTS = Path(__file__).parent


def run(*argv: str) -> None:
    print(f"$ {' '.join(argv)}")
    subprocess.run(argv, check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--per-class", type=int, default=60)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--lr", type=float, default=1e-3, help="small_cnn converges in a few epochs at 1e-3")
    args = parser.parse_args()

    workdir = Path(args.workdir)
    corpus = workdir / "corpus"
    run(
        sys.executable, str(SCRIPTS / "make_synthetic_corpus.py"),
        "--out", str(corpus), "--per-class", str(args.per_class),
    )
    run(
        sys.executable, "-m", "glandscreen.cli", "--seed", "42",
        "reproduce", "--root", str(corpus), "--out", str(workdir / "run"),
        "--backbone", "small_cnn", "--no-pretrained", "--no-stain-norm",
        "--epochs", str(args.epochs), "--lr", str(args.lr),
    )
    print()
    print("Done. To serve the trained model with the assistant UI:")
    print(
        f"  glandscreen serve --model-dir {workdir / 'run'} "
        f"--data-dir {workdir / 'service_data'} --frontend-dir frontend/dist"
    )


if __name__ == "__main__":
    main()
