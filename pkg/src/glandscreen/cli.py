"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 domain error, 2 usage error. Every run writes a
manifest recording the resolved config so it can be reproduced.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .config import PipelineConfig, ServiceConfig
from .corpus import CLASS_NAMES, scan_corpus, stratified_split, write_split_file, read_split_file
from .errors import GlandScreenError
from .evaluation import confusion, metrics, render_reports, threshold_sweep
from .gradcam import explain_image
from .models import load_checkpoint
from .patches import extract_patches, segment_tissue
from .pipeline import load_image
from .predict import label_for, predict_image
from .stain import estimate_stain_model, normalize_macenko, rgb_to_od
from .training import train

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _image_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def _write_run_manifest(out_dir: Path, command: str, cfg: PipelineConfig, extra: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": cfg.to_dict(), **extra}
    (out_dir / "run.json").write_text(json.dumps(payload, indent=2))


def _override(obj, **updates):
    applied = {k: v for k, v in updates.items() if v is not None}
    return dataclasses.replace(obj, **applied) if applied else obj


def cmd_normalize(args, cfg: PipelineConfig) -> int:
    stain = _override(
        cfg.stain,
        od_floor=args.od_floor,
        conc_percentile=args.conc_percentile,
        white_reference=args.white_reference,
    )
    if args.angle_lo is not None or args.angle_hi is not None:
        lo = args.angle_lo if args.angle_lo is not None else stain.angle_percentiles[0]
        hi = args.angle_hi if args.angle_hi is not None else stain.angle_percentiles[1]
        stain = dataclasses.replace(stain, angle_percentiles=(lo, hi))
    cfg = dataclasses.replace(cfg, stain=stain, reference_image=args.reference_image or cfg.reference_image)
    reference = cfg.reference()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for path in _image_files(Path(args.input)):
        img = load_image(path)
        sidecar = {"source": str(path), "reference": reference.to_dict(), "fallback": False}
        try:
            source_model = estimate_stain_model(rgb_to_od(img, stain), stain)
            normalized = normalize_macenko(img, reference, stain)
            sidecar["estimated"] = source_model.to_dict()
        except GlandScreenError as exc:
            print(f"warning: {path.name}: {type(exc).__name__}: {exc}; passing through", file=sys.stderr)
            normalized = img
            sidecar["fallback"] = True
            sidecar["estimated"] = None
        Image.fromarray(normalized).save(out_dir / f"{path.stem}_norm.png")
        (out_dir / f"{path.stem}_norm.json").write_text(json.dumps(sidecar, indent=2))
        results.append({"source": str(path), "fallback": sidecar["fallback"]})
    _write_run_manifest(out_dir, "normalize", cfg, {"images": results})
    print(f"normalized {len(results)} images -> {out_dir}")
    return 0


def cmd_extract_patches(args, cfg: PipelineConfig) -> int:
    patch_params = _override(
        cfg.patch,
        saturation_threshold=args.saturation_threshold,
        value_ceiling=args.value_ceiling,
        open_radius=args.open_radius,
        close_radius=args.close_radius,
        min_region_area=args.min_region_area,
        max_patches=args.max_patches,
        patch_size=args.patch_size,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_entries = []
    for path in _image_files(Path(args.input)):
        img = load_image(path)
        patches = extract_patches(img, segment_tissue(img, patch_params), patch_params, path.stem)
        for k, patch in enumerate(patches):
            name = f"{path.stem}_p{k}.png"
            Image.fromarray(patch.pixels).save(out_dir / name)
            manifest_entries.append({"file": name, **patch.to_manifest_entry()})
    (out_dir / "patches.json").write_text(json.dumps(manifest_entries, indent=2))
    cfg = dataclasses.replace(cfg, patch=patch_params)
    _write_run_manifest(out_dir, "extract-patches", cfg, {"patch_count": len(manifest_entries)})
    print(f"wrote {len(manifest_entries)} patches -> {out_dir}")
    return 0


def cmd_split(args, cfg: PipelineConfig) -> int:
    seed = args.seed if args.seed is not None else 42
    folder_labels = None
    if args.class_map:
        folder_labels = json.loads(Path(args.class_map).read_text())
    samples = scan_corpus(args.root, folder_labels=folder_labels)
    train_set, val_set = stratified_split(samples, args.fraction, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_split_file(out, train_set, val_set, seed)
    counts = {
        "train": {l: sum(s.label == l for s in train_set) for l in CLASS_NAMES},
        "val": {l: sum(s.label == l for s in val_set) for l in CLASS_NAMES},
    }
    print(json.dumps({"split": counts, "seed": seed}, indent=2))
    return 0


def _apply_train_overrides(args, cfg: PipelineConfig) -> PipelineConfig:
    model = _override(cfg.model, backbone=args.backbone, pretrained=args.pretrained)
    train_cfg = _override(
        cfg.train,
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        gamma=args.gamma,
        seed=args.seed,
        device=args.device,
    )
    augment = _override(cfg.augment, seed=args.seed)
    updates = {"model": model, "train": train_cfg, "augment": augment}
    if args.no_stain_norm:
        updates["stain_enabled"] = False
    return dataclasses.replace(cfg, **updates)


def _run_training(split_path: Path, cfg: PipelineConfig, out_dir: Path, cache_dir: str | None):
    train_set, val_set = read_split_file(split_path)
    return train(
        train_set,
        val_set,
        cfg.model,
        cfg.train,
        prep=cfg.preprocess_options(),
        augment_cfg=cfg.augment,
        out_dir=out_dir,
        cache_dir=cache_dir,
    )


def cmd_train(args, cfg: PipelineConfig) -> int:
    cfg = _apply_train_overrides(args, cfg)
    out_dir = Path(args.out)
    manifest = _run_training(Path(args.split), cfg, out_dir, args.cache_dir)
    best = manifest.best_record()
    print(
        f"best epoch {manifest.best_epoch}: acc {best.val_accuracy:.4f} "
        f"macro-F1 {best.val_macro_f1:.4f}; balanced threshold {manifest.balanced_threshold:.2f}"
    )
    print(f"checkpoint: {manifest.checkpoint}")
    return 0


def _prep_for_checkpoint(checkpoint: Path, cfg: PipelineConfig):
    from .config import preprocess_from_manifest_configs

    manifest_path = checkpoint.parent / "manifest.json"
    named = checkpoint.with_name(checkpoint.stem + ".manifest.json")
    for candidate in (named, manifest_path):
        if candidate.exists():
            configs = json.loads(candidate.read_text()).get("configs", {})
            return preprocess_from_manifest_configs(configs)
    return cfg.preprocess_options()


def cmd_predict(args, cfg: PipelineConfig) -> int:
    model, _, extra = load_checkpoint(args.checkpoint)
    prep = _prep_for_checkpoint(Path(args.checkpoint), cfg)
    threshold = args.threshold
    if threshold is None:
        threshold = extra.get("balanced_threshold", 0.5)
    outputs = []
    for path in args.image:
        img = load_image(path)
        result = predict_image(model, img, prep, threshold=threshold, source_id=Path(path).stem)
        outputs.append({"image": str(path), **result.to_dict()})
        print(f"{path}: {result.label} (p_abnormal={result.abnormal_probability:.4f})")
    payload = outputs[0] if len(outputs) == 1 else outputs
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2))
    return 0


def _load_predictions(path: Path) -> tuple[np.ndarray, list[str], list[str]]:
    records = json.loads(path.read_text())
    if isinstance(records, dict):
        records = records["items"]
    ids = [str(r.get("id", i)) for i, r in enumerate(records)]
    probs = np.array([float(r["abnormal_probability"]) for r in records])
    labels = [r["label"] for r in records]
    return probs, labels, ids


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    grid = _override(
        cfg.evaluate, grid_step=args.grid_step
    ).grid()
    probs, labels, _ = _load_predictions(Path(args.predictions))
    sweep = threshold_sweep(probs, labels, grid)
    threshold = args.threshold if args.threshold is not None else 0.5
    predicted = [label_for(p, threshold) for p in probs]
    cm = confusion(predicted, labels)
    report = metrics(cm)

    out_dir = Path(args.out)
    paths = render_reports(sweep, cm, out_dir)
    metrics_payload = {
        "threshold": threshold,
        "confusion": cm.to_dict(),
        "metrics": report.to_dict(),
        "accuracy": report.accuracy,
        "balanced_threshold": sweep.balanced_threshold,
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics_payload, indent=2))
    _write_run_manifest(out_dir, "evaluate", cfg, {"threshold": threshold})
    print(f"accuracy {report.accuracy:.4f}")
    print(f"F1 abnormal {report.abnormal.f1:.4f}, F1 normal {report.normal.f1:.4f}")
    print(f"balanced threshold {sweep.balanced_threshold:.2f}")
    print(f"reports: {', '.join(str(p) for p in paths.values())}")
    return 0


def _parse_target_class(raw: str | None) -> int | None:
    if raw is None:
        return None
    if raw in ("0", "1"):
        return int(raw)
    if raw in CLASS_NAMES:
        return CLASS_NAMES.index(raw)
    raise ValueError(f"target class must be 0, 1, or one of {list(CLASS_NAMES)}")


def cmd_explain(args, cfg: PipelineConfig) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    prep = _prep_for_checkpoint(Path(args.checkpoint), cfg)
    img = load_image(args.image)
    target = _parse_target_class(args.target_class)
    if target is None:
        result = predict_image(model, img, prep)
        target = CLASS_NAMES.index(result.label)
    explanation = explain_image(model, img, target, prep, opacity=args.opacity)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, overlay_img in enumerate(explanation.patch_overlays):
        Image.fromarray(overlay_img).save(out_dir / f"patch_{i:02d}.png")
    Image.fromarray(explanation.composite_overlay).save(out_dir / "composite.png")
    (out_dir / "explain.json").write_text(json.dumps(explanation.to_summary(), indent=2))
    print(f"wrote {len(explanation.patch_overlays)} overlays + composite -> {out_dir}")
    return 0


def _env_or(flag_value, env_name: str, fallback):
    if flag_value is not None:
        return flag_value
    raw = os.environ.get(env_name)
    if raw is None:
        return fallback
    return type(fallback)(raw) if fallback is not None else raw


def cmd_serve(args, cfg: PipelineConfig) -> int:
    import uvicorn

    from .service import create_app

    service = cfg.service
    threshold = _env_or(args.threshold, "GLANDSCREEN_THRESHOLD", service.default_threshold)
    service = ServiceConfig(
        host=_env_or(args.host, "GLANDSCREEN_HOST", service.host),
        port=int(_env_or(args.port, "GLANDSCREEN_PORT", service.port)),
        model_dir=_env_or(args.model_dir, "GLANDSCREEN_MODEL_DIR", service.model_dir),
        data_dir=_env_or(args.data_dir, "GLANDSCREEN_DATA_DIR", service.data_dir),
        default_model=service.default_model,
        default_threshold=float(threshold) if threshold is not None else None,
        max_upload_bytes=service.max_upload_bytes,
        frontend_dir=_env_or(args.frontend_dir, "GLANDSCREEN_FRONTEND_DIR", service.frontend_dir),
    )
    app = create_app(service)
    print(f"serving on http://{service.host}:{service.port} (models: {service.model_dir})")
    uvicorn.run(app, host=service.host, port=service.port, log_level="info")
    return 0


def cmd_reproduce(args, cfg: PipelineConfig) -> int:
    cfg = _apply_train_overrides(args, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 42

    samples = scan_corpus(args.root)
    train_set, val_set = stratified_split(samples, args.fraction, seed)
    split_path = out_dir / "split.json"
    write_split_file(split_path, train_set, val_set, seed)
    print(f"split: {len(train_set)} train / {len(val_set)} val")

    manifest = _run_training(split_path, cfg, out_dir, args.cache_dir)

    from .training import PatchDataset, evaluate_whole_images

    model, _, _ = load_checkpoint(manifest.checkpoint)
    val_ds = PatchDataset(val_set, cfg.preprocess_options(), None, cache_dir=args.cache_dir)
    probs, actual, _ = evaluate_whole_images(model, val_ds, cfg.train.threshold)
    sweep = threshold_sweep(probs, actual, cfg.evaluate.grid())
    predicted = [label_for(p, cfg.train.threshold) for p in probs]
    cm = confusion(predicted, actual)
    report = metrics(cm)
    render_reports(sweep, cm, out_dir)
    metrics_payload = {
        "threshold": cfg.train.threshold,
        "confusion": cm.to_dict(),
        "metrics": report.to_dict(),
        "accuracy": report.accuracy,
        "balanced_threshold": sweep.balanced_threshold,
        "best_epoch": manifest.best_epoch,
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics_payload, indent=2))

    print("validation report")
    print(f"  accuracy          {report.accuracy:.4f}")
    print(f"  F1 abnormal       {report.abnormal.f1:.4f}")
    print(f"  F1 normal         {report.normal.f1:.4f}")
    print(f"  recall abnormal   {report.abnormal.recall:.4f}")
    print(f"  recall normal     {report.normal.recall:.4f}")
    print(f"  balanced threshold {sweep.balanced_threshold:.2f}")
    print(f"  confusion {cm.to_dict()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glandscreen",
        description="Cervical-gland histology screening pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON pipeline config file")
    parser.add_argument("--seed", type=int, default=None, help="override stage seeds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="stain-normalize images against a reference")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--reference-image", default=None)
    p.add_argument("--od-floor", type=float, default=None)
    p.add_argument("--angle-lo", type=float, default=None)
    p.add_argument("--angle-hi", type=float, default=None)
    p.add_argument("--conc-percentile", type=float, default=None)
    p.add_argument("--white-reference", type=float, default=None)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("extract-patches", help="crop glandular patches from images")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--saturation-threshold", type=float, default=None)
    p.add_argument("--value-ceiling", type=float, default=None)
    p.add_argument("--open-radius", type=int, default=None)
    p.add_argument("--close-radius", type=int, default=None)
    p.add_argument("--min-region-area", type=int, default=None)
    p.add_argument("--max-patches", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.set_defaults(func=cmd_extract_patches)

    p = sub.add_parser("split", help="stratified train/val split")
    p.add_argument("--root", required=True)
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--out", default="split.json")
    p.add_argument("--class-map", default=None,
                   help="JSON file mapping folder names to labels for non-default layouts")
    p.set_defaults(func=cmd_split)

    for name, help_text in (("train", "train from a split file"), ("reproduce", "split + train + evaluate")):
        p = sub.add_parser(name, help=help_text)
        if name == "train":
            p.add_argument("--split", required=True, help="split.json from the split subcommand")
        else:
            p.add_argument("--root", required=True)
            p.add_argument("--fraction", type=float, default=0.8)
        p.add_argument("--out", required=True)
        p.add_argument("--backbone", default=None)
        p.add_argument("--pretrained", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--device", default=None)
        p.add_argument("--cache-dir", default=None)
        p.add_argument("--no-stain-norm", action="store_true")
        p.set_defaults(func=cmd_train if name == "train" else cmd_reproduce)

    p = sub.add_parser("predict", help="classify whole images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", nargs="+", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default=None, help="write PredictionResult JSON here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics + threshold sweep from predictions JSON")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--grid-step", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="Grad-CAM overlays for an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-class", default=None)
    p.add_argument("--opacity", type=float, default=0.4)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve", help="run the inference HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--model-dir", default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--frontend-dir", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
        return args.func(args, cfg)
    except GlandScreenError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
