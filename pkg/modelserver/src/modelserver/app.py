"""HTTP layer: the denoiser wire protocol over a model registry.

Endpoints (UTF-8 JSON):
  GET  /v1/models
  POST /v1/denoise   one forward pass per call, logits for masked positions
  POST /v1/encode    text -> token ids (default model's codec)
  POST /v1/decode    token ids -> text

Schema violations return 400, unknown models 404, saturation 503. The
server holds no per-client state; batching inside a model is invisible to
the caller, which is why cost accounting stays one-request-one-evaluation.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .codec import CodecError
from .registry import ModelRegistry


class DenoiseRequest(BaseModel):
    model_id: str
    tokens: list[int]
    mask_id: int
    prompt_len: int


class EncodeRequest(BaseModel):
    text: str
    model_id: str | None = None


class DecodeRequest(BaseModel):
    tokens: list[int]
    model_id: str | None = None


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": detail})


def create_app(registry: ModelRegistry, max_concurrency: int = 8) -> FastAPI:
    if max_concurrency < 1:
        raise ValueError("max_concurrency must be at least 1")
    app = FastAPI(title="umf model server")
    app.state.registry = registry
    app.state.gate = threading.BoundedSemaphore(max_concurrency)

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        return _bad_request(str(exc.errors()[:1]))

    @app.get("/v1/models")
    def models():
        return {"models": registry.listing()}

    def _resolve(model_id: str | None):
        model = registry.get(model_id) if model_id else registry.default()
        if model is None:
            return None, JSONResponse(
                status_code=404, content={"detail": f"unknown model {model_id!r}"}
            )
        return model, None

    @app.post("/v1/denoise")
    def denoise(request: DenoiseRequest):
        model = registry.get(request.model_id)
        if model is None:
            return JSONResponse(
                status_code=404, content={"detail": f"unknown model {request.model_id!r}"}
            )
        if request.mask_id != model.mask_id:
            return _bad_request(
                f"mask_id {request.mask_id} does not match the served model's {model.mask_id}"
            )
        if not 0 <= request.prompt_len <= len(request.tokens):
            return _bad_request("prompt_len outside the token sequence")
        extended = model.vocab_size + 1
        for i, tok in enumerate(request.tokens):
            if not 0 <= tok < extended:
                return _bad_request(f"token {tok} at index {i} outside 0..{extended - 1}")
        positions = [
            i
            for i in range(request.prompt_len, len(request.tokens))
            if request.tokens[i] == model.mask_id
        ]
        if not positions:
            return _bad_request("no masked positions in the generation segment")
        if not app.state.gate.acquire(blocking=False):
            return JSONResponse(status_code=503, content={"detail": "server saturated"})
        try:
            rows = model.logits(request.tokens, request.prompt_len, positions)
            registry.count_forward(model.model_id)
        finally:
            app.state.gate.release()
        return {"positions": positions, "logits": rows}

    @app.post("/v1/encode")
    def encode(request: EncodeRequest):
        model, error = _resolve(request.model_id)
        if error is not None:
            return error
        try:
            return {"tokens": model.encode(request.text)}
        except CodecError as exc:
            return _bad_request(str(exc))

    @app.post("/v1/decode")
    def decode(request: DecodeRequest):
        model, error = _resolve(request.model_id)
        if error is not None:
            return error
        try:
            return {"text": model.decode(request.tokens)}
        except CodecError as exc:
            return _bad_request(str(exc))

    return app
