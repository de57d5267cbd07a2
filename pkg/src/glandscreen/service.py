"""HTTP inference service: prediction, explanation, registry, case history.

The service owns immutable loaded models (swap is a reference replacement),
persists every prediction as a case, and serializes explanation work per
model. The assistant UI and scripted clients consume the same JSON API,
documented in docs/api.md.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .config import FALLBACK_BALANCED_THRESHOLD, ServiceConfig, preprocess_from_manifest_configs
from .corpus import CLASS_NAMES
from .errors import GlandScreenError
from .gradcam import explain_image
from .models import load_checkpoint
from .pipeline import PreprocessOptions
from .predict import predict_image
from .storage import VALID_DISPOSITIONS, CaseStore

log = logging.getLogger(__name__)

ACCEPTED_FORMATS = {"PNG", "JPEG", "BMP", "TIFF"}


class ModelLoading(GlandScreenError):
    """The requested model is being loaded by another request."""


@dataclass
class ModelEntry:
    model_id: str
    checkpoint_path: Path
    manifest_path: Path | None
    is_default: bool = False
    state: str = "unloaded"  # unloaded | loading | ready | error
    model: object | None = None
    prep: PreprocessOptions | None = None
    balanced_threshold: float | None = None
    backbone: str | None = None
    explain_lock: threading.Lock = field(default_factory=threading.Lock)

    def to_public(self) -> dict:
        return {
            "id": self.model_id,
            "state": self.state,
            "default": self.is_default,
            "backbone": self.backbone,
            "balanced_threshold": self.balanced_threshold,
        }


def _find_manifest(checkpoint: Path) -> Path | None:
    named = checkpoint.with_name(checkpoint.stem + ".manifest.json")
    if named.exists():
        return named
    sibling = checkpoint.parent / "manifest.json"
    return sibling if sibling.exists() else None


class ModelRegistry:
    """Checkpoints discovered under the model directory, loaded lazily."""

    def __init__(self, model_dir: Path | str, default_model: str | None = None) -> None:
        self.model_dir = Path(model_dir)
        self._entries: dict[str, ModelEntry] = {}
        self._load_lock = threading.Lock()
        self.scan(default_model)

    def scan(self, default_model: str | None = None) -> None:
        found: dict[str, Path] = {}
        if self.model_dir.is_dir():
            for path in sorted(self.model_dir.glob("*.pt")):
                found[path.stem] = path
            for path in sorted(self.model_dir.glob("*/model.pt")):
                found.setdefault(path.parent.name, path)
        entries = {}
        for model_id, path in sorted(found.items()):
            existing = self._entries.get(model_id)
            if existing and existing.checkpoint_path == path:
                entries[model_id] = existing
                continue
            manifest = _find_manifest(path)
            entry = ModelEntry(model_id, path, manifest)
            if manifest:
                try:
                    data = json.loads(manifest.read_text())
                    entry.balanced_threshold = data.get("balanced_threshold")
                    entry.backbone = data.get("configs", {}).get("model", {}).get("backbone")
                except (OSError, json.JSONDecodeError) as exc:
                    log.warning("unreadable manifest for %s: %s", model_id, exc)
            entries[model_id] = entry
        self._entries = entries
        default_id = default_model if default_model in entries else None
        if default_id is None and entries:
            default_id = sorted(entries)[0]
        for model_id, entry in entries.items():
            entry.is_default = model_id == default_id

    def entries(self) -> list[ModelEntry]:
        return list(self._entries.values())

    def default_id(self) -> str | None:
        for entry in self._entries.values():
            if entry.is_default:
                return entry.model_id
        return None

    def get(self, model_id: str) -> ModelEntry:
        if model_id not in self._entries:
            raise KeyError(model_id)
        return self._entries[model_id]

    def ensure_loaded(self, model_id: str) -> ModelEntry:
        """Load on first use; a load in progress elsewhere raises ModelLoading."""
        entry = self.get(model_id)
        if entry.state == "ready":
            return entry
        if not self._load_lock.acquire(blocking=False):
            raise ModelLoading(f"model {model_id} is loading")
        try:
            if entry.state == "ready":
                return entry
            entry.state = "loading"
            model, cfg, extra = load_checkpoint(entry.checkpoint_path)
            entry.backbone = cfg.backbone
            if entry.balanced_threshold is None:
                entry.balanced_threshold = extra.get("balanced_threshold")
            if entry.manifest_path:
                configs = json.loads(entry.manifest_path.read_text()).get("configs", {})
                entry.prep = preprocess_from_manifest_configs(configs)
            else:
                entry.prep = PreprocessOptions()
            entry.model = model
            entry.state = "ready"
            return entry
        except Exception:
            entry.state = "error"
            raise
        finally:
            self._load_lock.release()


def resolve_threshold(entry: ModelEntry, override: float | None, configured: float | None) -> float:
    """Precedence: request override, service config, model manifest, 0.45, 0.5."""
    for candidate in (override, configured, entry.balanced_threshold, FALLBACK_BALANCED_THRESHOLD):
        if candidate is not None and 0 <= candidate <= 1:
            return float(candidate)
    return 0.5


def _decode_upload(content: bytes, max_bytes: int) -> np.ndarray:
    if len(content) > max_bytes:
        raise HTTPException(400, detail=f"upload exceeds {max_bytes} bytes")
    try:
        with Image.open(io.BytesIO(content)) as img:
            if img.format not in ACCEPTED_FORMATS:
                raise HTTPException(
                    400, detail=f"unsupported format {img.format}; accepted: {sorted(ACCEPTED_FORMATS)}"
                )
            return np.asarray(img.convert("RGB"))
    except HTTPException:
        raise
    except Exception:
        raise HTTPException(400, detail="undecodable image")


def create_app(cfg: ServiceConfig) -> FastAPI:
    app = FastAPI(title="glandscreen inference service", version="0.1.0")
    data_dir = Path(cfg.data_dir)
    images_dir = data_dir / "images"
    artifacts_dir = data_dir / "artifacts"
    images_dir.mkdir(parents=True, exist_ok=True)
    artifacts_dir.mkdir(parents=True, exist_ok=True)

    store = CaseStore(data_dir / "cases.sqlite3")
    registry = ModelRegistry(cfg.model_dir, cfg.default_model)
    explaining: set[str] = set()
    explaining_lock = threading.Lock()

    for entry in registry.entries():
        store.upsert_model(
            entry.model_id, str(entry.checkpoint_path), {"backbone": entry.backbone},
            str(entry.manifest_path) if entry.manifest_path else None, entry.is_default,
        )

    app.state.store = store
    app.state.registry = registry
    app.state.explaining = explaining

    def _entry_or_404(model_id: str | None) -> ModelEntry:
        resolved = model_id or registry.default_id()
        if resolved is None:
            raise HTTPException(404, detail="no models registered")
        try:
            entry = registry.get(resolved)
        except KeyError:
            raise HTTPException(404, detail=f"unknown model {resolved!r}")
        try:
            return registry.ensure_loaded(resolved)
        except ModelLoading as exc:
            raise HTTPException(503, detail=str(exc))

    def _save_image(img: np.ndarray, content: bytes) -> Path:
        digest = hashlib.sha256(content).hexdigest()[:24]
        path = images_dir / f"{digest}.png"
        if not path.exists():
            Image.fromarray(img).save(path)
        return path

    def _run_predict(img: np.ndarray, content: bytes, model_id: str | None, threshold: float | None) -> dict:
        entry = _entry_or_404(model_id)
        used_threshold = resolve_threshold(entry, threshold, cfg.default_threshold)
        result = predict_image(entry.model, img, entry.prep, threshold=used_threshold)
        case_id = uuid.uuid4().hex[:12]
        image_path = _save_image(img, content)
        created = store.insert_case(
            case_id, str(image_path), entry.model_id, used_threshold, result.to_dict()
        )
        return {
            "case_id": case_id,
            "created_at": created,
            "model_id": entry.model_id,
            "threshold": used_threshold,
            "balanced_threshold": resolve_threshold(entry, None, None),
            "prediction": result.to_dict(),
        }

    @app.post("/api/predict")
    async def predict(request: Request):
        form = await request.form()
        upload = form.get("file")
        if upload is None or isinstance(upload, str):
            raise HTTPException(400, detail="multipart field 'file' is required")
        content = await upload.read()
        img = _decode_upload(content, cfg.max_upload_bytes)
        model_id = form.get("model_id") or None
        raw_threshold = form.get("threshold")
        threshold = None
        if raw_threshold not in (None, ""):
            try:
                threshold = float(raw_threshold)
            except ValueError:
                raise HTTPException(422, detail="threshold must be a number")
            if not 0 <= threshold <= 1:
                raise HTTPException(422, detail="threshold must lie in [0, 1]")
        return _run_predict(img, content, model_id, threshold)

    def _explain_case(case: dict, target_class: int | None) -> dict:
        case_id = case["case_id"]
        cached = store.get_explanation(case_id)
        if cached is not None:
            return cached

        with explaining_lock:
            if case_id in explaining:
                raise HTTPException(409, detail=f"explanation for {case_id} already in progress")
            explaining.add(case_id)
        try:
            entry = _entry_or_404(case["model_id"])
            if target_class is None:
                target_class = CLASS_NAMES.index(case["prediction"]["label"])
            img = np.asarray(Image.open(case["image_path"]).convert("RGB"))
            with entry.explain_lock:  # explanation is serialized per model
                explanation = explain_image(entry.model, img, target_class, entry.prep)
            case_dir = artifacts_dir / case_id
            case_dir.mkdir(parents=True, exist_ok=True)
            patch_urls = []
            for i, overlay_img in enumerate(explanation.patch_overlays):
                name = f"patch_{i:02d}.png"
                Image.fromarray(overlay_img).save(case_dir / name)
                patch_urls.append(f"/artifacts/{case_id}/{name}")
            Image.fromarray(explanation.composite_overlay).save(case_dir / "composite.png")
            payload = {
                "case_id": case_id,
                **explanation.to_summary(),
                "patch_overlays": patch_urls,
                "composite_overlay": f"/artifacts/{case_id}/composite.png",
            }
            store.put_explanation(case_id, payload)
            return payload
        finally:
            with explaining_lock:
                explaining.discard(case_id)

    @app.post("/api/explain")
    async def explain(request: Request):
        content_type = request.headers.get("content-type", "")
        target_class: int | None = None
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("file")
            if upload is None or isinstance(upload, str):
                raise HTTPException(400, detail="multipart field 'file' is required")
            content = await upload.read()
            img = _decode_upload(content, cfg.max_upload_bytes)
            if form.get("target_class") not in (None, ""):
                target_class = int(form["target_class"])
            created = _run_predict(img, content, form.get("model_id") or None, None)
            case = store.get_case(created["case_id"])
        else:
            body = await request.json()
            case_id = body.get("case_id")
            if not case_id:
                raise HTTPException(400, detail="case_id (or an image upload) is required")
            case = store.get_case(case_id)
            if case is None:
                raise HTTPException(404, detail=f"unknown case {case_id!r}")
            if body.get("target_class") is not None:
                target_class = int(body["target_class"])
        if target_class is not None and target_class not in (0, 1):
            raise HTTPException(422, detail="target_class must be 0 (abnormal) or 1 (normal)")
        return _explain_case(case, target_class)

    @app.get("/api/models")
    def list_models():
        entries = registry.entries()
        return {
            "models": [
                {**e.to_public(), "threshold": resolve_threshold(e, None, cfg.default_threshold)}
                for e in entries
            ],
            "default": registry.default_id(),
        }

    @app.get("/api/cases")
    def list_cases(limit: int = 50):
        return {"cases": store.list_cases(limit=limit), "summary": store.case_summary()}

    @app.get("/api/cases/{case_id}")
    def get_case(case_id: str):
        case = store.get_case(case_id)
        if case is None:
            raise HTTPException(404, detail=f"unknown case {case_id!r}")
        return case

    @app.post("/api/cases/{case_id}/disposition")
    async def add_disposition(case_id: str, request: Request):
        body = await request.json()
        disposition = body.get("disposition")
        if disposition not in VALID_DISPOSITIONS:
            raise HTTPException(
                422, detail=f"disposition must be one of {list(VALID_DISPOSITIONS)}"
            )
        if store.get_case(case_id) is None:
            raise HTTPException(404, detail=f"unknown case {case_id!r}")
        record = store.add_disposition(case_id, disposition, str(body.get("note", "")))
        return {"case_id": case_id, **record}

    @app.get("/api/health")
    def health():
        default = registry.default_id()
        status = "loading"
        if default is not None and registry.get(default).state == "ready":
            status = "ready"
        return {
            "status": status,
            "default_model": default,
            "models": [e.to_public() for e in registry.entries()],
        }

    @app.exception_handler(GlandScreenError)
    async def domain_error_handler(_request, exc: GlandScreenError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    app.mount("/artifacts", StaticFiles(directory=artifacts_dir), name="artifacts")
    if cfg.frontend_dir and Path(cfg.frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=cfg.frontend_dir, html=True), name="frontend")

    return app
