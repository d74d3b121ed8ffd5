"""HTTP wire protocol for segmentation backends.

Any object satisfying the ``Backend`` protocol can be served with
``create_backend_app`` and consumed with ``HttpBackend``; the two ends
are inverses, so a backend behind the wire behaves like the in-process
one. All tensors cross the wire in the binary tensor container; masks
cross as run-length dicts.

Endpoints:
  GET  /v1/capabilities  -> capabilities JSON
  POST /v1/encode        <- PNG bytes
                         -> {"feature_id", "stride", "features": base64 tensor}
  POST /v1/decode        <- multipart: "header" JSON field
                            {feature_id, points: [{x,y,label}], box: [x0,y0,x1,y1]?,
                             has_semantic: bool} plus an optional "semantic"
                            tensor part
                         -> [{"rle": {...}, "quality": float}, ...]
  POST /v1/text_sim      <- {"feature_id" | "image": base64 PNG, "text": str}
                         -> raw tensor bytes (application/octet-stream)

Status mapping: 400 undecodable payloads, 404 unknown feature id,
422 schema or prompt violations, 501 unsupported capability.
"""

from __future__ import annotations

import base64
import io
import json
import threading
from collections import OrderedDict

import httpx
import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from PIL import Image, UnidentifiedImageError

from .backend import Backend, BackendCapabilities, DecodeRequest, ScoredMask
from .core import (
    Box,
    FeatureMap,
    PromptPoint,
    RleMask,
    image_content_hash,
    rle_decode,
    rle_encode,
    tensor_from_bytes,
    tensor_to_bytes,
)
from .errors import (
    BackendRequestError,
    BackendUnreachableError,
    CapabilityError,
    MalformedBlobError,
    MalformedPromptError,
    MalformedRleError,
    PromptCountError,
    UnknownFeatureError,
)

_STATUS_BY_ERROR = (
    (UnknownFeatureError, 404),
    (CapabilityError, 501),
    ((MalformedPromptError, MalformedBlobError, MalformedRleError), 422),
    (PromptCountError, 400),
)


def _error_response(exc: Exception) -> JSONResponse:
    for kinds, status in _STATUS_BY_ERROR:
        if isinstance(exc, kinds):
            return JSONResponse({"detail": str(exc)}, status_code=status)
    raise exc


def _png_to_array(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise BackendRequestError(f"body is not a decodable image: {exc}") from exc


def array_to_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


# ===== server =====


def create_backend_app(backend: Backend) -> FastAPI:
    """ASGI app exposing one backend over the wire protocol."""
    app = FastAPI(title="promptcount-backend")

    @app.exception_handler(PromptCountError)
    async def handle_domain_error(_request: Request, exc: PromptCountError):
        return _error_response(exc)

    @app.get("/v1/capabilities")
    def capabilities() -> dict:
        return backend.capabilities().to_dict()

    @app.post("/v1/encode")
    async def encode(request: Request) -> dict:
        image = _png_to_array(await request.body())
        feature_id, features = backend.encode_image(image)
        return {
            "feature_id": feature_id,
            "stride": features.stride,
            "features": base64.b64encode(tensor_to_bytes(features.values)).decode(),
        }

    @app.post("/v1/decode")
    async def decode(
        header: str = Form(...),
        semantic: UploadFile | None = File(None),
    ) -> list[dict]:
        try:
            fields = json.loads(header)
        except json.JSONDecodeError as exc:
            raise MalformedPromptError(f"header is not valid JSON: {exc}") from exc
        try:
            points = tuple(
                PromptPoint(float(p["x"]), float(p["y"]), int(p["label"]))
                for p in fields.get("points", [])
            )
            box = fields.get("box")
            box = Box(*(int(v) for v in box)) if box is not None else None
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedPromptError(f"bad prompt fields: {exc}") from exc
        embedding = None
        if fields.get("has_semantic"):
            if semantic is None:
                raise MalformedPromptError("has_semantic set but no semantic part")
            embedding = tensor_from_bytes(await semantic.read())
        request = DecodeRequest(
            feature_id=str(fields.get("feature_id", "")),
            points=points,
            box=box,
            semantic=embedding,
        )
        masks = backend.decode_masks(request)
        return [
            {"rle": rle_encode(m.mask).to_dict(), "quality": m.quality} for m in masks
        ]

    @app.post("/v1/text_sim")
    async def text_sim(request: Request) -> Response:
        try:
            fields = json.loads(await request.body())
            text = fields["text"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise MalformedPromptError(f"bad text_sim request: {exc}") from exc
        if "feature_id" in fields:
            feature_id = str(fields["feature_id"])
        elif "image" in fields:
            feature_id, _ = backend.encode_image(
                _png_to_array(base64.b64decode(fields["image"]))
            )
        else:
            raise MalformedPromptError("text_sim needs feature_id or image")
        sim = backend.text_similarity(feature_id, str(text))
        return Response(
            content=tensor_to_bytes(np.asarray(sim, dtype=np.float32)),
            media_type="application/octet-stream",
        )

    return app


# ===== client =====


class HttpBackend:
    """Backend protocol client over the wire protocol.

    A custom ``httpx.Client`` can be injected (e.g. one bound to an ASGI
    transport for in-process tests). Encoded features are cached by image
    content hash so repeated pipeline stages reuse one wire round-trip.
    """

    def __init__(
        self,
        base_url: str,
        client: httpx.Client | None = None,
        timeout: float = 60.0,
        cache_size: int = 4,
    ):
        self._base = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._owns_client = client is None
        self._lock = threading.Lock()
        self._encoded: OrderedDict[str, tuple[str, FeatureMap]] = OrderedDict()
        self._cache_size = cache_size
        self._capabilities: BackendCapabilities | None = None

    def close(self) -> None:
        if self._owns_client:
            self._client.close()

    def __enter__(self) -> "HttpBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- protocol --

    def capabilities(self) -> BackendCapabilities:
        with self._lock:
            if self._capabilities is not None:
                return self._capabilities
        payload = self._request("GET", "/v1/capabilities").json()
        caps = BackendCapabilities.from_dict(payload)
        with self._lock:
            self._capabilities = caps
        return caps

    def encode_image(self, image: np.ndarray) -> tuple[str, FeatureMap]:
        key = image_content_hash(np.asarray(image))
        with self._lock:
            hit = self._encoded.get(key)
            if hit is not None:
                self._encoded.move_to_end(key)
                return hit
        payload = self._request(
            "POST",
            "/v1/encode",
            content=array_to_png(image),
            headers={"content-type": "image/png"},
        ).json()
        features = FeatureMap(
            values=tensor_from_bytes(base64.b64decode(payload["features"])),
            stride=int(payload["stride"]),
        )
        entry = (str(payload["feature_id"]), features)
        with self._lock:
            self._encoded[key] = entry
            self._encoded.move_to_end(key)
            while len(self._encoded) > self._cache_size:
                self._encoded.popitem(last=False)
        return entry

    def decode_masks(self, request: DecodeRequest) -> list[ScoredMask]:
        header = {
            "feature_id": request.feature_id,
            "points": [
                {"x": p.x, "y": p.y, "label": p.label} for p in request.points
            ],
            "box": list(request.box.as_tuple()) if request.box is not None else None,
            "has_semantic": request.semantic is not None,
        }
        files = {}
        if request.semantic is not None:
            files["semantic"] = (
                "semantic.tnsr",
                tensor_to_bytes(np.asarray(request.semantic, dtype=np.float32)),
                "application/octet-stream",
            )
        response = self._request(
            "POST", "/v1/decode", data={"header": json.dumps(header)}, files=files
        )
        return [
            ScoredMask(
                mask=rle_decode(RleMask.from_dict(item["rle"])),
                quality=float(item["quality"]),
            )
            for item in response.json()
        ]

    def text_similarity(self, feature_id: str, text: str) -> np.ndarray:
        response = self._request(
            "POST", "/v1/text_sim", json={"feature_id": feature_id, "text": text}
        )
        return tensor_from_bytes(response.content).astype(np.float64)

    # -- internals --

    def _request(self, method: str, path: str, **kwargs) -> httpx.Response:
        url = self._base + path
        try:
            response = self._client.request(method, url, **kwargs)
        except httpx.TransportError as exc:
            raise BackendUnreachableError(f"{method} {url}: {exc}") from exc
        if response.status_code < 400:
            return response
        try:
            detail = response.json().get("detail", response.text)
        except (json.JSONDecodeError, ValueError):
            detail = response.text
        detail = f"{method} {path} -> {response.status_code}: {detail}"
        if response.status_code == 404:
            raise UnknownFeatureError(detail)
        if response.status_code == 422:
            raise MalformedPromptError(detail)
        if response.status_code == 501:
            raise CapabilityError(detail)
        raise BackendRequestError(detail)
