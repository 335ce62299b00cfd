"""Cascade orchestration and the HTTP screening platform.

Pipeline per screening: segment -> lung-mask -> stage-2 screen -> (if
positive) heatmap-mask -> stage-3 screen. Stage 3 runs exactly when stage
2 decides positive; a negative stage 2 terminates as NORMAL. Every
accepted upload is persisted with a monotone id along with its heatmaps.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import os
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import dataclasses

import numpy as np
from fastapi import FastAPI, Query, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError

from .backbone import StageModel
from .checkpoint import load_bundle
from .data.preprocess import preprocess
from .data.types import CxrImage, Label
from .explain import guided_png, heatmap_png
from .segmenter import LungMask, SegmenterModel, apply_mask, predict_mask
from .stage2 import Stage2Output, screen_stage2
from .stage3 import MaskedInput, Stage3Output, make_stage3_input, screen_stage3

MAX_UPLOAD_BYTES = 20 * 1024 * 1024


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: Path = Path("data")
    registry_path: Path = Path("registry.json")
    host: str = "127.0.0.1"
    port: int = 8000
    stage2_threshold: float = 0.5
    stage3_threshold: float = 0.5
    max_upload_bytes: int = MAX_UPLOAD_BYTES

    @staticmethod
    def load(
        path: Optional[str | Path] = None,
        env: Optional[dict] = None,
        **overrides,
    ) -> "ServiceConfig":
        """Precedence: explicit overrides > CASCADE_* environment > file."""
        env = dict(os.environ if env is None else env)
        values: dict = {}
        if path is not None:
            with open(path) as fh:
                raw = json.load(fh)
            for key in ("data_dir", "registry_path", "host", "port",
                        "stage2_threshold", "stage3_threshold", "max_upload_bytes"):
                if key in raw:
                    values[key] = raw[key]
        env_map = {
            "CASCADE_DATA_DIR": ("data_dir", str),
            "CASCADE_REGISTRY": ("registry_path", str),
            "CASCADE_HOST": ("host", str),
            "CASCADE_PORT": ("port", int),
            "CASCADE_STAGE2_THRESHOLD": ("stage2_threshold", float),
            "CASCADE_STAGE3_THRESHOLD": ("stage3_threshold", float),
            "CASCADE_MAX_UPLOAD_BYTES": ("max_upload_bytes", int),
        }
        for env_key, (key, cast) in env_map.items():
            if env_key in env:
                values[key] = cast(env[env_key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("data_dir", "registry_path"):
            if key in values:
                values[key] = Path(values[key])
        values.setdefault("port", 8000)
        values["port"] = int(values["port"])
        return ServiceConfig(**values)


@dataclass(frozen=True)
class ModelRegistryEntry:
    stage: int
    version_id: str
    path: str
    active: bool


@dataclass(eq=False)
class RegistrySnapshot:
    segmenter: SegmenterModel
    stage2: StageModel
    stage3: StageModel
    entries: tuple[ModelRegistryEntry, ...] = ()

    @property
    def versions(self) -> dict[str, str]:
        return {
            "stage1": self.segmenter.version_id,
            "stage2": self.stage2.version_id,
            "stage3": self.stage3.version_id,
        }


def read_registry(path: str | Path) -> list[ModelRegistryEntry]:
    with open(path) as fh:
        raw = json.load(fh)
    return [ModelRegistryEntry(**e) for e in raw["models"]]


def write_registry(path: str | Path, entries: list[ModelRegistryEntry]) -> None:
    with open(path, "w") as fh:
        json.dump({"models": [e.__dict__ for e in entries]}, fh, indent=2)


def load_snapshot(registry_path: str | Path) -> RegistrySnapshot:
    """Load the one active checkpoint per stage; anything else is an error."""
    registry_path = Path(registry_path)
    entries = read_registry(registry_path)
    active: dict[int, ModelRegistryEntry] = {}
    for e in entries:
        if not e.active:
            continue
        if e.stage in active:
            raise ValueError(f"registry has multiple active entries for stage {e.stage}")
        active[e.stage] = e
    missing = [s for s in (1, 2, 3) if s not in active]
    if missing:
        raise ValueError(f"registry lacks active checkpoints for stages {missing}")
    base = registry_path.parent
    models = {}
    for stage, entry in active.items():
        bundle = load_bundle(base / entry.path)
        model = bundle.model
        if entry.version_id and model.version_id != entry.version_id:
            raise ValueError(
                f"stage {stage} checkpoint version mismatch: "
                f"registry says {entry.version_id}, loaded {model.version_id}"
            )
        models[stage] = model
    return RegistrySnapshot(
        segmenter=models[1], stage2=models[2], stage3=models[3], entries=tuple(entries)
    )


@dataclass(eq=False)
class CascadePrediction:
    final_class: Label
    stage2: Stage2Output
    stage3: Optional[Stage3Output]
    lung_mask: LungMask
    masked_image: np.ndarray
    stage3_input: Optional[MaskedInput]
    model_versions: dict[str, str]
    flags: tuple[str, ...] = ()
    screening_id: Optional[int] = None
    created: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.stage3 is not None) != self.stage2.decision:
            raise ValueError("stage3 output must be present iff stage2 decided positive")
        if (self.final_class == Label.NORMAL) == self.stage2.decision:
            raise ValueError("final_class NORMAL must coincide with a negative stage 2")


def decide_final_class(stage2_positive: bool, stage3_positive: Optional[bool]) -> Label:
    """The cascade gating table."""
    if not stage2_positive:
        return Label.NORMAL
    if stage3_positive is None:
        raise ValueError("positive stage 2 requires a stage 3 decision")
    return Label.COVID if stage3_positive else Label.NON_COVID_PNEUMONIA


def run_cascade(
    image: CxrImage,
    models: RegistrySnapshot,
    stage2_threshold: float = 0.5,
    stage3_threshold: float = 0.5,
) -> CascadePrediction:
    """Execute all stages on one canonical image, retaining every artifact."""
    mask = predict_mask(image, models.segmenter)
    masked = apply_mask(image, mask)
    out2 = screen_stage2(image, models.segmenter, models.stage2, stage2_threshold)

    out3: Optional[Stage3Output] = None
    stage3_input: Optional[MaskedInput] = None
    if out2.decision:
        stage3_input = make_stage3_input(masked, out2.heatmap)
        out3 = screen_stage3(stage3_input, models.stage3, stage3_threshold)
    final = decide_final_class(out2.decision, out3.decision if out3 else None)
    flags = tuple(dict.fromkeys(image.flags + mask.flags + out2.heatmap.flags))
    return CascadePrediction(
        final_class=final,
        stage2=out2,
        stage3=out3,
        lung_mask=mask,
        masked_image=masked.pixels,
        stage3_input=stage3_input,
        model_versions=models.versions,
        flags=flags,
    )


def prediction_json(pred: CascadePrediction, base_url: str = "") -> dict:
    heatmaps = {}
    if pred.screening_id is not None:
        heatmaps["stage2_cam"] = f"{base_url}/v1/screenings/{pred.screening_id}/heatmaps/stage2_cam"
        if pred.stage3 is not None:
            heatmaps["stage3_gradcam"] = (
                f"{base_url}/v1/screenings/{pred.screening_id}/heatmaps/stage3_gradcam"
            )
            heatmaps["guided"] = f"{base_url}/v1/screenings/{pred.screening_id}/heatmaps/guided"
    body = {
        "id": pred.screening_id,
        "final_class": pred.final_class.name,
        "created": pred.created,
        "flags": list(pred.flags),
        "model_versions": pred.model_versions,
        "stage2": {
            "prob": round(pred.stage2.prob_pneumonia, 6),
            "decision": pred.stage2.decision,
            "threshold": pred.stage2.threshold,
        },
        "stage3": None,
        "heatmaps": heatmaps,
        "image": (
            f"{base_url}/v1/screenings/{pred.screening_id}/image"
            if pred.screening_id is not None else None
        ),
    }
    if pred.stage3 is not None:
        body["stage3"] = {
            "prob": round(pred.stage3.prob_covid, 6),
            "decision": pred.stage3.decision,
            "threshold": pred.stage3.threshold,
        }
    return body


class RecordStore:
    """Append-only sqlite-backed store; images and heatmaps live as files."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.data_dir / "screenings.db", check_same_thread=False)
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS screenings ("
            "id INTEGER PRIMARY KEY AUTOINCREMENT,"
            "created TEXT NOT NULL,"
            "final_class TEXT NOT NULL,"
            "body TEXT NOT NULL)"
        )
        self._conn.commit()

    def persist(self, pred: CascadePrediction, original_png: bytes) -> CascadePrediction:
        created = dt.datetime.now(dt.timezone.utc).isoformat()
        with self._lock:
            cur = self._conn.execute(
                "INSERT INTO screenings (created, final_class, body) VALUES (?, ?, ?)",
                (created, pred.final_class.name, "{}"),
            )
            sid = int(cur.lastrowid)
            pred = dataclasses.replace(pred, screening_id=sid, created=created)
            folder = self.data_dir / "screenings" / str(sid)
            folder.mkdir(parents=True, exist_ok=True)
            (folder / "original.png").write_bytes(original_png)
            (folder / "stage2_cam.png").write_bytes(heatmap_png(pred.stage2.heatmap))
            mask_png = io.BytesIO()
            Image.fromarray((pred.lung_mask.pixels * 255).astype(np.uint8)).save(
                mask_png, format="PNG"
            )
            (folder / "lung_mask.png").write_bytes(mask_png.getvalue())
            if pred.stage3 is not None:
                (folder / "stage3_gradcam.png").write_bytes(heatmap_png(pred.stage3.gradcam))
                (folder / "guided.png").write_bytes(guided_png(pred.stage3.guided))
            self._conn.execute(
                "UPDATE screenings SET body = ? WHERE id = ?",
                (json.dumps(prediction_json(pred)), sid),
            )
            self._conn.commit()
        return pred

    def get(self, screening_id: int) -> Optional[dict]:
        with self._lock:
            row = self._conn.execute(
                "SELECT body FROM screenings WHERE id = ?", (screening_id,)
            ).fetchone()
        return json.loads(row[0]) if row else None

    def heatmap_path(self, screening_id: int, name: str) -> Path:
        return self.data_dir / "screenings" / str(screening_id) / f"{name}.png"

    def list(
        self,
        final_class: Optional[str] = None,
        date_from: Optional[str] = None,
        date_to: Optional[str] = None,
        page: int = 1,
        page_size: int = 20,
    ) -> tuple[list[dict], int]:
        clauses, params = [], []
        if final_class:
            clauses.append("final_class = ?")
            params.append(final_class)
        if date_from:
            clauses.append("created >= ?")
            params.append(date_from)
        if date_to:
            clauses.append("created < ?")
            params.append(date_to)
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        with self._lock:
            total = self._conn.execute(
                f"SELECT COUNT(*) FROM screenings{where}", params
            ).fetchone()[0]
            rows = self._conn.execute(
                f"SELECT body FROM screenings{where} ORDER BY id DESC LIMIT ? OFFSET ?",
                params + [page_size, (page - 1) * page_size],
            ).fetchall()
        return [json.loads(r[0]) for r in rows], int(total)

    def count(self) -> int:
        with self._lock:
            return int(self._conn.execute("SELECT COUNT(*) FROM screenings").fetchone()[0])

    def audit_gating(self) -> list[int]:
        """Ids of persisted records violating the cascade gating invariants."""
        bad = []
        items, total = self.list(page_size=10_000_000)
        for body in items:
            stage2_positive = body["stage2"]["decision"]
            has_stage3 = body["stage3"] is not None
            if has_stage3 != stage2_positive:
                bad.append(body["id"])
            elif (body["final_class"] == "NORMAL") == stage2_positive:
                bad.append(body["id"])
        return bad


def decode_upload(data: bytes) -> CxrImage:
    """PNG/JPEG bytes -> canonical CxrImage; raises ValueError on junk."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode not in ("L", "I", "I;16", "F"):
                im = im.convert("L")
            arr = np.array(im)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ValueError(f"invalid_image: {exc}") from exc
    return preprocess(arr)


def create_app(config: ServiceConfig, models: Optional[RegistrySnapshot] = None) -> FastAPI:
    import contextlib

    @contextlib.asynccontextmanager
    async def lifespan(app_: FastAPI):
        if app_.state.models is None:
            try:
                app_.state.models = load_snapshot(config.registry_path)
            except (OSError, ValueError, KeyError):
                app_.state.models = None
        yield

    app = FastAPI(title="cxrscreen", version="0.1.0", lifespan=lifespan)
    store = RecordStore(config.data_dir)
    app.state.config = config
    app.state.store = store
    app.state.models = models

    @app.get("/healthz")
    def healthz():
        if app.state.models is None:
            return JSONResponse({"status": "loading"}, status_code=503)
        return {"status": "ok", "models": app.state.models.versions}

    @app.get("/v1/models")
    def list_models():
        if app.state.models is None:
            return JSONResponse({"error": "models_not_loaded"}, status_code=503)
        snapshot = app.state.models
        entries = [e.__dict__ for e in snapshot.entries] or [
            {"stage": s, "version_id": v, "path": "", "active": True}
            for s, v in ((1, snapshot.versions["stage1"]),
                         (2, snapshot.versions["stage2"]),
                         (3, snapshot.versions["stage3"]))
        ]
        return {"models": entries, "active": snapshot.versions}

    @app.post("/v1/screenings", status_code=201)
    async def create_screening(file: UploadFile):
        if app.state.models is None:
            return JSONResponse({"error": "models_not_loaded"}, status_code=503)
        data = await file.read()
        if len(data) > config.max_upload_bytes:
            return JSONResponse({"error": "too_large"}, status_code=422)
        try:
            image = decode_upload(data)
        except ValueError:
            return JSONResponse({"error": "invalid_image"}, status_code=422)
        pred = run_cascade(
            image, app.state.models, config.stage2_threshold, config.stage3_threshold
        )
        png = io.BytesIO()
        Image.fromarray(np.round(image.pixels * 255).astype(np.uint8)).save(png, format="PNG")
        pred = store.persist(pred, png.getvalue())
        return prediction_json(pred)

    @app.get("/v1/screenings")
    def list_screenings(
        final_class: Optional[str] = None,
        date_from: Optional[str] = Query(default=None, alias="from"),
        date_to: Optional[str] = Query(default=None, alias="to"),
        page: int = 1,
        page_size: int = 20,
    ):
        if final_class is not None and final_class not in Label.__members__:
            return JSONResponse({"error": "unknown_class"}, status_code=422)
        page = max(1, page)
        page_size = max(1, min(200, page_size))
        items, total = store.list(final_class, date_from, date_to, page, page_size)
        return {"items": items, "total": total, "page": page, "page_size": page_size}

    @app.get("/v1/screenings/{screening_id}")
    def get_screening(screening_id: int):
        body = store.get(screening_id)
        if body is None:
            return JSONResponse({"error": "not_found"}, status_code=404)
        return body

    @app.get("/v1/screenings/{screening_id}/heatmaps/{name}")
    def get_heatmap(screening_id: int, name: str):
        if name not in ("stage2_cam", "stage3_gradcam", "guided", "lung_mask"):
            return JSONResponse({"error": "unknown_heatmap"}, status_code=404)
        path = store.heatmap_path(screening_id, name)
        if not path.exists():
            return JSONResponse({"error": "not_found"}, status_code=404)
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/v1/screenings/{screening_id}/image")
    def get_image(screening_id: int):
        path = store.heatmap_path(screening_id, "original")
        if not path.exists():
            return JSONResponse({"error": "not_found"}, status_code=404)
        return Response(content=path.read_bytes(), media_type="image/png")

    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(config: ServiceConfig) -> None:
    """Blocking server entry point; refuses to start without valid models."""
    import uvicorn

    models = load_snapshot(config.registry_path)  # fail fast with a clear error
    app = create_app(config, models=models)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
