"""HTTP surface: /v1/score, /v1/segment, /healthz.

Request validation is explicit so every rejection is an HTTP 400 with
``{"error": ...}`` naming the offending field. Model invocations are
serialized through one lock per process: concurrent clients queue FIFO,
matching how a single accelerator would be shared.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .codecs import PayloadError, decode_f32_b64, decode_png_b64, encode_f32_b64, encode_png_b64
from .config import SidecarConfig
from .models import build_score_model, build_segment_model

__all__ = ["create_app", "build_models"]


class RequestError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _field(body: dict, name: str, kind, required: bool = True):
    if name not in body:
        if required:
            raise RequestError(name, "missing required field")
        return None
    value = body[name]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise RequestError(name, f"expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise RequestError(name, f"expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, kind):
        raise RequestError(name, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def build_models(config: SidecarConfig):
    score_models = {tag: build_score_model(model, config.device) for tag, model in config.providers.items()}
    segment_model = build_segment_model(config.segmenter, config.device)
    return score_models, segment_model


def create_app(config: SidecarConfig | None = None, models=None) -> FastAPI:
    config = config or SidecarConfig.stub()
    score_models, segment_model = models if models is not None else build_models(config)
    gpu_lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        # pre-loaded models (serve.py loads before binding) are left alone
        for model in (*score_models.values(), segment_model):
            if not model.ready:
                model.load()
        yield

    app = FastAPI(title="hcog guidance sidecar", lifespan=lifespan)

    @app.exception_handler(RequestError)
    async def handle_request_error(request: Request, exc: RequestError):
        return JSONResponse({"error": str(exc)}, status_code=400)

    async def parse_json(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise RequestError("<body>", "request body is not valid JSON")
        if not isinstance(body, dict):
            raise RequestError("<body>", "request body must be a JSON object")
        return body

    @app.get("/healthz")
    def healthz():
        providers = {tag: model.ready for tag, model in score_models.items()}
        providers["segmenter"] = segment_model.ready
        return {"ready": all(providers.values()), "providers": providers}

    @app.post("/v1/score")
    async def score(request: Request):
        body = await parse_json(request)
        prompt = _field(body, "prompt", str)
        try:
            image = decode_png_b64(_field(body, "image", str), "RGB").astype(np.float64)
        except PayloadError as exc:
            raise RequestError("image", str(exc))
        h, w = image.shape[:2]
        timestep = _field(body, "timestep", int)
        if timestep < 0:
            raise RequestError("timestep", "must be >= 0")
        try:
            noise = decode_f32_b64(_field(body, "noise", str), h * w * 3).reshape(h, w, 3)
        except PayloadError as exc:
            raise RequestError("noise", str(exc))

        conditioning = None
        if body.get("conditioning") is not None:
            cond = body["conditioning"]
            if not isinstance(cond, dict):
                raise RequestError("conditioning", "expected null or an object")
            if cond.get("type") != "silhouette":
                raise RequestError("conditioning.type", f"unsupported type {cond.get('type')!r}")
            try:
                conditioning = decode_png_b64(_field(cond, "image", str), "L")
            except PayloadError as exc:
                raise RequestError("conditioning.image", str(exc))
            if conditioning.shape != (h, w):
                raise RequestError(
                    "conditioning.image", f"shape {conditioning.shape} does not match image ({h}, {w})"
                )

        provider = _field(body, "provider", str)
        if provider not in score_models:
            raise RequestError("provider", f"no model configured for tag {provider!r}")
        cfg_scale = _field(body, "cfg_scale", float)
        model = score_models[provider]
        if not model.ready:
            raise RequestError("provider", f"model for {provider!r} is not ready")

        with gpu_lock:
            prediction = model.predict_noise(image, noise, timestep, prompt, conditioning, cfg_scale)
        return {"noise_pred": encode_f32_b64(prediction)}

    @app.post("/v1/segment")
    async def segment(request: Request):
        body = await parse_json(request)
        try:
            image = decode_png_b64(_field(body, "image", str), "RGB").astype(np.float64)
        except PayloadError as exc:
            raise RequestError("image", str(exc))
        query = _field(body, "query", str)
        if not segment_model.ready:
            raise RequestError("query", "segmentation model is not ready")
        with gpu_lock:
            mask = segment_model.predict_mask(image, query)
        return {"mask": encode_png_b64(mask.astype(np.uint8))}

    return app
