"""Core value types and binary codecs.

Conventions used everywhere downstream:

- images are ``uint8`` arrays of shape ``(h, w, 3)``, masks are ``bool``
  arrays of shape ``(h, w)``;
- boxes are half-open pixel rectangles ``[x0, x1) x [y0, y1)``;
- run-length encoding is row-major with alternating run lengths starting
  with the zero run (which may have length 0);
- the binary tensor container is little-endian:
  ``"TNSR" | version u8 | dtype u8 | rank u8 | rank * dim u32 | payload``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kernels
from .errors import MalformedBlobError, MalformedRleError

TENSOR_MAGIC = b"TNSR"
TENSOR_VERSION = 1
_DTYPE_CODES = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}


# ===== binary tensor container =====


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    """Serialize a uint8/float32 array into the container format."""
    dt = np.dtype(arr.dtype)
    if dt == np.dtype(np.float32):
        code = 1
        payload = np.ascontiguousarray(arr, dtype="<f4")
    elif dt == np.dtype(np.uint8):
        code = 0
        payload = np.ascontiguousarray(arr, dtype=np.uint8)
    else:
        raise MalformedBlobError(f"unsupported tensor dtype {dt}")
    rank = arr.ndim
    if rank > 255:
        raise MalformedBlobError("tensor rank exceeds container limit")
    head = TENSOR_MAGIC + struct.pack("<BBB", TENSOR_VERSION, code, rank)
    dims = struct.pack(f"<{rank}I", *arr.shape) if rank else b""
    return head + dims + payload.tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    """Parse container bytes back into an array, validating every field."""
    if len(buf) < 7 or buf[:4] != TENSOR_MAGIC:
        raise MalformedBlobError("bad tensor magic")
    version, code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != TENSOR_VERSION:
        raise MalformedBlobError(f"unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise MalformedBlobError(f"unknown dtype code {code}")
    off = 7
    if len(buf) < off + 4 * rank:
        raise MalformedBlobError("truncated dimension header")
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    dt = _CODE_DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expect = n * dt.itemsize
    if len(buf) - off != expect:
        raise MalformedBlobError(
            f"payload length {len(buf) - off} != expected {expect}"
        )
    return np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).copy()


# ===== prompt geometry =====


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"empty box {(self.x0, self.y0, self.x1, self.y1)}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def clamp(self, width: int, height: int) -> "Box":
        x0 = min(max(self.x0, 0), width - 1)
        y0 = min(max(self.y0, 0), height - 1)
        x1 = max(min(self.x1, width), x0 + 1)
        y1 = max(min(self.y1, height), y0 + 1)
        return Box(x0, y0, x1, y1)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class PromptPoint:
    """A click inside the image; label 1 marks foreground, 0 background."""

    x: float
    y: float
    label: int = 1

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"point label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class PromptSet:
    """User prompts for one counting request."""

    points: tuple[PromptPoint, ...] = field(default_factory=tuple)
    boxes: tuple[Box, ...] = field(default_factory=tuple)
    text: str | None = None

    def families(self) -> list[str]:
        out = []
        if self.points:
            out.append("points")
        if self.boxes:
            out.append("boxes")
        if self.text is not None:
            out.append("text")
        return out


# ===== run-length codec =====


@dataclass(frozen=True)
class RleMask:
    """Row-major uncompressed RLE; counts alternate 0-runs / 1-runs."""

    width: int
    height: int
    counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "counts": list(self.counts)}

    @staticmethod
    def from_dict(d: dict) -> "RleMask":
        try:
            return RleMask(int(d["width"]), int(d["height"]), tuple(int(c) for c in d["counts"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRleError(f"bad rle payload: {exc}") from exc


def rle_encode(mask: np.ndarray) -> RleMask:
    """Encode a 2D boolean mask."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    flat = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    counts = kernels.rle_encode_counts(flat)
    h, w = mask.shape
    return RleMask(width=int(w), height=int(h), counts=tuple(int(c) for c in counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Decode back to a 2D boolean mask, validating run totals."""
    if rle.width <= 0 or rle.height <= 0:
        raise MalformedRleError(f"bad dimensions {rle.width}x{rle.height}")
    counts = np.asarray(rle.counts, dtype=np.int64)
    if counts.size == 0 or np.any(counts < 0):
        raise MalformedRleError("counts must be non-empty and non-negative")
    n = rle.width * rle.height
    total = int(counts.sum())
    if total != n:
        raise MalformedRleError(f"run total {total} != {rle.width}x{rle.height}")
    flat = kernels.rle_decode_flat(counts, n)
    return flat.astype(bool).reshape(rle.height, rle.width)


# ===== overlap algebra =====


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two equally-shaped boolean masks; two empty masks give 0."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a, b).sum())
    union = int(a.sum()) + int(b.sum()) - inter
    return inter / union if union > 0 else 0.0


def box_iou(a: Box, b: Box) -> float:
    """IoU under half-open semantics; touching edges do not intersect."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def mask_bbox(mask: np.ndarray) -> Box | None:
    """Tight half-open bounding box of the set pixels; None when empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


# ===== image IO =====


def load_image(path: str) -> np.ndarray:
    """Read an image file as uint8 RGB (h, w, 3)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path: str, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def image_content_hash(image: np.ndarray) -> str:
    """Stable content hash used as the feature-cache key."""
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    digest = hashlib.sha256()
    digest.update(str(arr.shape).encode())
    digest.update(arr.tobytes())
    return "sha256:" + digest.hexdigest()


# ===== backend feature grid =====


@dataclass(frozen=True)
class FeatureMap:
    """Cell-resolution image embedding; values shape (grid_h, grid_w, channels)."""

    values: np.ndarray
    stride: int

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]
