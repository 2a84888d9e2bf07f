"""HTTP prediction service over the seven trained models.

Stateless: every request carries a full room description, the handler
encodes it and runs seven forward passes. Models load once at startup
from a directory of model files (``model_<id>.json``) and are shared
read-only across requests.
"""

from __future__ import annotations

import hashlib
import json
import os
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import mlp
from .dataset import MODEL_IDS, encode_features
from .rooms import (BANDS_HZ, N_BANDS, SHADING_CHOICES, RoomConfig,
                    RoomModelError, default_materials)

MODELS_DIR_ENV = "ROOMSOUND_MODELS_DIR"

# raw sigmoid output this close to its bounds means the prediction sits
# at the edge of the training range and deserves a flag
EXTRAPOLATION_LOW = 0.02
EXTRAPOLATION_HIGH = 0.98


class PredictionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    length: float = Field(gt=0, description="room length in m")
    width: float = Field(gt=0, description="room width in m")
    height: float = Field(gt=0, description="room height in m")
    wwr: float = Field(gt=0, lt=1, description="window-to-wall ratio")
    furniture_fraction: float = Field(gt=0, lt=1)
    shading: str = "none"
    wall_material: str | None = None
    floor_material: str | None = None
    ceiling_material: str | None = None
    window_material: str | None = None
    wall_absorption: list[float] | None = Field(None, min_length=N_BANDS,
                                                max_length=N_BANDS)
    floor_absorption: list[float] | None = Field(None, min_length=N_BANDS,
                                                 max_length=N_BANDS)
    ceiling_absorption: list[float] | None = Field(None, min_length=N_BANDS,
                                                   max_length=N_BANDS)
    window_absorption: list[float] | None = Field(None, min_length=N_BANDS,
                                                  max_length=N_BANDS)

    def to_flat_dict(self):
        doc = {"length": self.length, "width": self.width,
               "height": self.height, "wwr": self.wwr,
               "shading": self.shading,
               "furniture_fraction": self.furniture_fraction}
        for surface in ("wall", "floor", "ceiling", "window"):
            name = getattr(self, f"{surface}_material")
            alpha = getattr(self, f"{surface}_absorption")
            if name is not None:
                doc[f"{surface}_material"] = name
            if alpha is not None:
                doc[f"{surface}_absorption"] = alpha
        return doc


def load_models(models_dir):
    models = {}
    for model_id in MODEL_IDS:
        path = os.path.join(models_dir, f"model_{model_id}.json")
        if os.path.exists(path):
            models[model_id] = mlp.load(path)
    return models


def request_hash(doc):
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _field_errors(exc: RequestValidationError):
    out = []
    for err in exc.errors():
        loc = [str(p) for p in err["loc"] if p != "body"]
        out.append({"field": ".".join(loc) or "body", "message": err["msg"]})
    return out


def create_app(models_dir=None, db=None, static_dir=None) -> FastAPI:
    """Build the service; models_dir falls back to ROOMSOUND_MODELS_DIR.

    The app starts fine with no models on disk; prediction then answers
    503 until model files appear and the service is restarted.
    """
    models_dir = models_dir or os.environ.get(MODELS_DIR_ENV)
    db = db or default_materials()
    app = FastAPI(title="roomsound", docs_url=None, redoc_url=None)
    app.state.models = load_models(models_dir) if models_dir else {}
    app.state.db = db

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request,
                                 exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"errors": _field_errors(exc)})

    @app.get("/api/health")
    async def health():
        return {"status": "ok",
                "models_loaded": sorted(app.state.models)}

    @app.get("/api/materials")
    async def materials():
        return {"bands_hz": list(BANDS_HZ),
                "shading_choices": list(SHADING_CHOICES),
                "materials": [
                    {"name": m.name, "absorption": list(m.absorption),
                     "scattering": list(m.scattering)}
                    for m in app.state.db.values()]}

    @app.get("/api/models")
    async def model_info():
        out = {}
        for model_id, model in app.state.models.items():
            out[model_id] = {
                "version": mlp.MODEL_VERSION,
                "targets": list(model.target_names),
                "test_mae": model.metadata.get("test_mae", {}),
                "test_r2": model.metadata.get("test_r2", {}),
                "provenance": model.metadata.get("provenance", {}),
            }
        return {"models": out}

    @app.post("/api/predict")
    async def predict(body: PredictionRequest):
        t0 = time.perf_counter()
        missing = [m for m in MODEL_IDS if m not in app.state.models]
        if missing:
            return JSONResponse(
                status_code=503,
                content={"error": "models not loaded",
                         "missing": missing})
        doc = body.to_flat_dict()
        try:
            config = RoomConfig.from_flat_dict(doc, app.state.db)
        except RoomModelError as exc:
            msg = str(exc)
            if "unknown material" in msg:
                return JSONResponse(
                    status_code=422,
                    content={"error": msg,
                             "known_materials": sorted(app.state.db)})
            field = _config_error_field(msg)
            return JSONResponse(
                status_code=400,
                content={"errors": [{"field": field, "message": msg}]})

        predictions, extrapolation = {}, {}
        for model_id in MODEL_IDS:
            model = app.state.models[model_id]
            band = None if model_id == "sti" else int(model_id)
            features = encode_features(config, band, app.state.db)
            values, raw = mlp.predict(model, features)
            for i, name in enumerate(model.target_names):
                predictions[name] = float(values[i])
                extrapolation[name] = bool(raw[i] < EXTRAPOLATION_LOW
                                           or raw[i] > EXTRAPOLATION_HIGH)
        return {
            "request_hash": request_hash(doc),
            "model_version": mlp.MODEL_VERSION,
            "latency_ms": (time.perf_counter() - t0) * 1000.0,
            "predictions": predictions,
            "extrapolation": extrapolation,
        }

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")
    return app


def _config_error_field(message):
    for field in ("length", "width", "height", "wwr", "shading",
                  "furniture_fraction", "wall", "floor", "ceiling",
                  "window"):
        if field in message:
            return field
    return "body"
