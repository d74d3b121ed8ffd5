"""HTTP service behind the interactive counting UI.

Sessions hold an uploaded image in memory plus the last result, nothing
else; the heavy feature cache lives in the backend keyed by image
content, so re-counting an image costs one encode no matter how many
sessions show it.

API:
  GET  /api/health          -> {"status": "ok", "capabilities": {...}} | 503
  POST /api/images          <- multipart file upload
                            -> {"session_id", "width", "height"}
  POST /api/count           <- {"session_id", "mode", "points": [{x,y,label}],
                               "boxes": [[x0,y0,x1,y1]], "text": str?,
                               "config": {epsilon?, points_per_side?,
                                          points_per_batch?}}
                            -> {"count", "masks": [{rle, score, quality}],
                               "stats", "similarity": base64 tensor | null}
  GET  /api/sessions/{id}   -> session summary incl. last result

Unknown sessions give 404; an unreachable backend gives 503; prompt
violations give 422.
"""

from __future__ import annotations

import base64
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .backend import Backend
from .core import (
    Box,
    PromptPoint,
    PromptSet,
    image_content_hash,
    rle_encode,
    tensor_to_bytes,
)
from .errors import (
    BackendUnreachableError,
    CapabilityError,
    MalformedPromptError,
    PromptCountError,
)
from .pipelines import (
    CountResult,
    PipelineConfig,
    prior_guided_count,
    text_count,
    vanilla_count,
)
from .wire import _png_to_array

MODES = ("prior", "vanilla", "unfiltered")


@dataclass
class SessionState:
    id: str
    image: np.ndarray
    feature_key: str  # content hash; the backend's cache key for this image
    last_result: CountResult | None = None
    last_config: PipelineConfig | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


def _config_from_fields(fields: dict) -> PipelineConfig:
    allowed = {
        "epsilon": float,
        "points_per_side": int,
        "points_per_batch": int,
        "mask_nms_iou": float,
        "min_mask_area": int,
        "min_quality": float,
        "use_similarity_prior": bool,
        "use_segment_prior": bool,
        "use_semantic_prior": bool,
        "use_reference_selection": bool,
    }
    kwargs = {}
    for key, value in (fields or {}).items():
        if key not in allowed:
            raise MalformedPromptError(f"unknown config field {key!r}")
        if value is not None:
            kwargs[key] = allowed[key](value)
    try:
        return PipelineConfig(**kwargs)
    except ValueError as exc:
        raise MalformedPromptError(str(exc)) from exc


def _prompts_from_fields(fields: dict) -> PromptSet:
    try:
        points = tuple(
            PromptPoint(float(p["x"]), float(p["y"]), int(p.get("label", 1)))
            for p in fields.get("points") or []
        )
        boxes = tuple(
            Box(int(b[0]), int(b[1]), int(b[2]), int(b[3]))
            for b in fields.get("boxes") or []
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedPromptError(f"bad prompt fields: {exc}") from exc
    text = fields.get("text")
    if text is not None and (points or boxes):
        raise MalformedPromptError("text prompts cannot be combined with points/boxes")
    if text is None and not points and not boxes:
        raise MalformedPromptError("need at least one prompt")
    return PromptSet(points=points, boxes=boxes, text=text)


def _result_payload(result: CountResult) -> dict:
    similarity = None
    if result.similarity is not None:
        similarity = base64.b64encode(
            tensor_to_bytes(result.similarity.astype(np.float32))
        ).decode()
    return {
        "count": result.count,
        "masks": [
            {"rle": rle_encode(m.mask).to_dict(), "score": m.score, "quality": m.quality}
            for m in result.masks
        ],
        "stats": result.stats.to_dict(with_timing=True),
        "similarity": similarity,
    }


def create_service_app(backend: Backend, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="promptcount")
    sessions: dict[str, SessionState] = {}
    registry_lock = threading.Lock()

    @app.exception_handler(PromptCountError)
    async def handle_domain_error(_request: Request, exc: PromptCountError):
        if isinstance(exc, BackendUnreachableError):
            return JSONResponse({"detail": str(exc)}, status_code=503)
        if isinstance(exc, CapabilityError):
            return JSONResponse({"detail": str(exc)}, status_code=501)
        if isinstance(exc, MalformedPromptError):
            return JSONResponse({"detail": str(exc)}, status_code=422)
        return JSONResponse({"detail": str(exc)}, status_code=400)

    def session_or_404(session_id: str) -> SessionState | JSONResponse:
        with registry_lock:
            state = sessions.get(session_id)
        if state is None:
            return JSONResponse(
                {"detail": f"unknown session {session_id!r}"}, status_code=404
            )
        return state

    @app.get("/api/health")
    def health():
        try:
            caps = backend.capabilities()
        except BackendUnreachableError as exc:
            return JSONResponse(
                {"status": "backend_unreachable", "detail": str(exc)}, status_code=503
            )
        return {"status": "ok", "capabilities": caps.to_dict()}

    @app.post("/api/images")
    async def upload_image(file: UploadFile = File(...)):
        image = _png_to_array(await file.read())
        state = SessionState(
            id=uuid.uuid4().hex,
            image=image,
            feature_key=image_content_hash(image),
        )
        with registry_lock:
            sessions[state.id] = state
        return {
            "session_id": state.id,
            "width": int(image.shape[1]),
            "height": int(image.shape[0]),
        }

    @app.post("/api/count")
    async def count(request: Request):
        fields = await request.json()
        state = session_or_404(str(fields.get("session_id", "")))
        if isinstance(state, JSONResponse):
            return state
        mode = str(fields.get("mode", "prior"))
        if mode not in MODES:
            raise MalformedPromptError(f"unknown mode {mode!r}; expected {MODES}")
        prompts = _prompts_from_fields(fields)
        cfg = _config_from_fields(fields.get("config") or {})
        if mode == "unfiltered":
            cfg = replace(cfg, score_filter=False)
        with state.lock:  # one in-flight count per session
            if prompts.text is not None:
                result = text_count(
                    backend,
                    state.image,
                    prompts.text,
                    cfg,
                    mode="prior" if mode == "prior" else "vanilla",
                )
            elif mode == "prior":
                result = prior_guided_count(backend, state.image, prompts, cfg)
            else:
                result = vanilla_count(backend, state.image, prompts, cfg)
            state.last_result = result
            state.last_config = cfg
        payload = _result_payload(result)
        payload["session_id"] = state.id
        payload["mode"] = mode
        return payload

    @app.get("/api/sessions/{session_id}")
    def session_summary(session_id: str):
        state = session_or_404(session_id)
        if isinstance(state, JSONResponse):
            return state
        with state.lock:
            last = (
                _result_payload(state.last_result)
                if state.last_result is not None
                else None
            )
        return {
            "session_id": state.id,
            "width": int(state.image.shape[1]),
            "height": int(state.image.shape[0]),
            "feature_key": state.feature_key,
            "last_result": last,
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
