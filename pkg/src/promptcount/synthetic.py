"""Deterministic synthetic scenes and the oracle backend built on them.

A scene is a set of ellipse blobs with integer class ids on a flat
canvas. The backend derives everything from scene geometry: features are
per-cell class one-hots plus Gaussian noise seeded by the scene content,
decode returns the exact full ellipse mask of the blob owning the
prompted pixel (later blobs own overlap pixels), and registered class
names map text prompts onto deliberately coarse similarity maps with a
dilated halo. Because masks are exact, end-to-end counting tests have
exact expected values.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .backend import BackendCapabilities, DecodeRequest, ScoredMask
from .core import Box, FeatureMap, image_content_hash, mask_bbox
from .errors import (
    BackendRequestError,
    MalformedPromptError,
    UnknownFeatureError,
)

# Flat-color palette for rendering; index = class_id % len. Background is
# the canvas color below.
_PALETTE = np.array(
    [
        [230, 80, 60],
        [70, 140, 220],
        [90, 190, 90],
        [235, 195, 50],
        [160, 90, 200],
        [240, 130, 40],
        [60, 190, 190],
        [220, 100, 170],
    ],
    dtype=np.uint8,
)
_BACKGROUND = np.array([24, 24, 28], dtype=np.uint8)

TEXT_HALO_VALUE = 0.6


@dataclass(frozen=True)
class Blob:
    """Axis-aligned ellipse: ((x-cx)/rx)^2 + ((y-cy)/ry)^2 <= 1."""

    cx: float
    cy: float
    rx: float
    ry: float
    class_id: int

    def __post_init__(self):
        if self.rx <= 0 or self.ry <= 0:
            raise ValueError("blob radii must be positive")
        if self.class_id < 1:
            raise ValueError("class ids start at 1 (0 is background)")

    def to_dict(self) -> dict:
        return {
            "cx": self.cx,
            "cy": self.cy,
            "rx": self.rx,
            "ry": self.ry,
            "class_id": self.class_id,
        }


@dataclass(frozen=True)
class SyntheticScene:
    width: int
    height: int
    blobs: tuple[Blob, ...]
    class_names: tuple[tuple[str, int], ...] = field(default_factory=tuple)
    noise_sigma: float = 0.05
    text_halo: int = 1
    name: str = ""

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("canvas must be at least 8x8")
        for b in self.blobs:
            if not (0 <= b.cx - b.rx and b.cx + b.rx < self.width):
                raise ValueError(f"blob {b} leaves the canvas horizontally")
            if not (0 <= b.cy - b.ry and b.cy + b.ry < self.height):
                raise ValueError(f"blob {b} leaves the canvas vertically")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "blobs": [b.to_dict() for b in self.blobs],
            "class_names": {k: v for k, v in self.class_names},
            "noise_sigma": self.noise_sigma,
            "text_halo": self.text_halo,
            "name": self.name,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticScene":
        return SyntheticScene(
            width=int(d["width"]),
            height=int(d["height"]),
            blobs=tuple(
                Blob(
                    cx=float(b["cx"]),
                    cy=float(b["cy"]),
                    rx=float(b["rx"]),
                    ry=float(b["ry"]),
                    class_id=int(b["class_id"]),
                )
                for b in d["blobs"]
            ),
            class_names=tuple(
                sorted((str(k), int(v)) for k, v in d.get("class_names", {}).items())
            ),
            noise_sigma=float(d.get("noise_sigma", 0.05)),
            text_halo=int(d.get("text_halo", 1)),
            name=str(d.get("name", "")),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def class_ids(self) -> list[int]:
        return sorted({b.class_id for b in self.blobs})

    def count_of_class(self, class_id: int) -> int:
        return sum(1 for b in self.blobs if b.class_id == class_id)


def _seed_from(text: str) -> int:
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ===== rasterization =====


def blob_mask(scene: SyntheticScene, index: int) -> np.ndarray:
    """Full ellipse mask of one blob, ignoring occlusion by later blobs."""
    b = scene.blobs[index]
    ys = np.arange(scene.height, dtype=np.float64)[:, None]
    xs = np.arange(scene.width, dtype=np.float64)[None, :]
    mask = ((xs - b.cx) / b.rx) ** 2 + ((ys - b.cy) / b.ry) ** 2 <= 1.0
    mask.flags.writeable = False
    return mask


def owner_map(scene: SyntheticScene) -> np.ndarray:
    """Per-pixel owning blob index (-1 background); later blobs win overlaps."""
    out = np.full((scene.height, scene.width), -1, dtype=np.int32)
    ys = np.arange(scene.height, dtype=np.float64)[:, None]
    xs = np.arange(scene.width, dtype=np.float64)[None, :]
    for i, b in enumerate(scene.blobs):
        inside = ((xs - b.cx) / b.rx) ** 2 + ((ys - b.cy) / b.ry) ** 2 <= 1.0
        out[inside] = i
    return out


def class_map(scene: SyntheticScene, owners: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel class id (0 background) under the same occlusion rule."""
    owners = owner_map(scene) if owners is None else owners
    class_ids = np.array([b.class_id for b in scene.blobs], dtype=np.int32)
    out = np.zeros_like(owners)
    fg = owners >= 0
    out[fg] = class_ids[owners[fg]]
    return out


def render_scene(scene: SyntheticScene) -> np.ndarray:
    """Flat-color uint8 RGB rendering; deterministic for a given scene."""
    cmap = class_map(scene)
    img = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    img[:] = _BACKGROUND
    for cid in scene.class_ids():
        img[cmap == cid] = _PALETTE[cid % len(_PALETTE)]
    return img


# ===== the oracle backend =====


class _SceneGeometry:
    """Per-scene caches the backend needs to answer requests."""

    def __init__(self, scene: SyntheticScene, stride: int, channels: int):
        self.scene = scene
        self.owners = owner_map(scene)
        self.classes = class_map(scene, self.owners)
        self.masks = [blob_mask(scene, i) for i in range(len(scene.blobs))]
        self.cell_classes = _cell_majority(self.classes, stride)
        self.channels = channels

    def features(self, noise_sigma: float, stride: int) -> FeatureMap:
        gh, gw = self.cell_classes.shape
        one_hot = np.zeros((gh, gw, self.channels), dtype=np.float64)
        rows, cols = np.indices((gh, gw))
        one_hot[rows, cols, self.cell_classes] = 1.0
        rng = np.random.default_rng(_seed_from(self.scene.canonical_json() + ":features"))
        noisy = one_hot + rng.normal(0.0, noise_sigma, one_hot.shape)
        values = noisy.astype(np.float32)
        values.flags.writeable = False
        return FeatureMap(values=values, stride=stride)

    def text_map(self, class_id: int, noise_sigma: float) -> np.ndarray:
        """Coarse cell-resolution map: 1 on the class, a halo around it, noise."""
        base = (self.cell_classes == class_id).astype(np.float64)
        halo_px = self.scene.text_halo
        if halo_px > 0 and base.any():
            dilated = ndimage.binary_dilation(
                base > 0, structure=np.ones((3, 3), bool), iterations=halo_px
            )
            base = np.where((base == 0) & dilated, TEXT_HALO_VALUE, base)
        rng = np.random.default_rng(
            _seed_from(self.scene.canonical_json() + f":text:{class_id}")
        )
        return base + rng.normal(0.0, noise_sigma, base.shape)


def _cell_majority(classes: np.ndarray, stride: int) -> np.ndarray:
    """Majority pixel class per stride x stride cell (ties to the smaller id)."""
    h, w = classes.shape
    gh = -(-h // stride)
    gw = -(-w // stride)
    n_classes = int(classes.max()) + 1
    row_idx = np.arange(0, h, stride)
    col_idx = np.arange(0, w, stride)
    counts = np.zeros((gh, gw, n_classes), dtype=np.int64)
    for cid in range(n_classes):
        m = (classes == cid).astype(np.float64)
        counts[:, :, cid] = np.add.reduceat(
            np.add.reduceat(m, row_idx, axis=0), col_idx, axis=1
        ).astype(np.int64)
    return np.argmax(counts, axis=2).astype(np.int32)


class SyntheticBackend:
    """Oracle backend over one or more registered scenes.

    Images are routed to their scene by content hash, so a single backend
    instance can serve a whole benchmark manifest. All randomness is
    seeded by scene content; repeated calls are byte-identical.
    """

    def __init__(self, scenes, stride: int = 8, geometry_cache: int = 8):
        if isinstance(scenes, SyntheticScene):
            scenes = [scenes]
        if not scenes:
            raise ValueError("need at least one scene")
        self._scenes = list(scenes)
        self._stride = stride
        max_class = max(max(b.class_id for b in s.blobs) if s.blobs else 0 for s in self._scenes)
        self._channels = max_class + 1
        self._by_hash = {
            image_content_hash(render_scene(s)): s for s in self._scenes
        }
        self._lock = threading.Lock()
        self._features: dict[str, FeatureMap] = {}
        self._scene_for_feature: dict[str, SyntheticScene] = {}
        self._geometry: OrderedDict[str, _SceneGeometry] = OrderedDict()
        self._geometry_cap = geometry_cache

    # -- protocol --

    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(
            supports_semantic_prior=True,
            supports_text=True,
            input_resolution=0,
            feature_channels=self._channels,
            feature_stride=self._stride,
        )

    def encode_image(self, image: np.ndarray) -> tuple[str, FeatureMap]:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
            raise BackendRequestError(
                f"expected uint8 (h, w, 3) image, got {image.dtype} {image.shape}"
            )
        fid = image_content_hash(image)
        with self._lock:
            cached = self._features.get(fid)
        if cached is not None:
            return fid, cached
        scene = self._by_hash.get(fid)
        if scene is None:
            raise BackendRequestError("image does not match any registered scene")
        geo = self._geometry_for(scene)
        feats = geo.features(scene.noise_sigma, self._stride)
        with self._lock:
            self._features[fid] = feats
            self._scene_for_feature[fid] = scene
        return fid, feats

    def decode_masks(self, request: DecodeRequest) -> list[ScoredMask]:
        scene = self._scene_for(request.feature_id)
        geo = self._geometry_for(scene)
        idx = self._resolve_blob(scene, geo, request)
        if idx is None:
            return []
        blob = scene.blobs[idx]
        if request.semantic is not None:
            sem = np.asarray(request.semantic, dtype=np.float64).ravel()
            norm = float(np.linalg.norm(sem))
            cos = sem[blob.class_id] / norm if norm > 0 and blob.class_id < sem.size else 0.0
            if cos <= 0.5:
                return []
        return [ScoredMask(mask=geo.masks[idx], quality=1.0)]

    def text_similarity(self, feature_id: str, text: str) -> np.ndarray:
        scene = self._scene_for(feature_id)
        geo = self._geometry_for(scene)
        cid = self._resolve_text(scene, text)
        if cid is None:
            return np.zeros(geo.cell_classes.shape, dtype=np.float64)
        return geo.text_map(cid, scene.noise_sigma)

    # -- internals --

    def _scene_for(self, feature_id: str) -> SyntheticScene:
        with self._lock:
            scene = self._scene_for_feature.get(feature_id)
        if scene is None:
            raise UnknownFeatureError(f"unknown feature id {feature_id!r}")
        return scene

    def _geometry_for(self, scene: SyntheticScene) -> _SceneGeometry:
        key = scene.canonical_json()
        with self._lock:
            geo = self._geometry.get(key)
            if geo is not None:
                self._geometry.move_to_end(key)
                return geo
        geo = _SceneGeometry(scene, self._stride, self._channels)
        with self._lock:
            self._geometry[key] = geo
            self._geometry.move_to_end(key)
            while len(self._geometry) > self._geometry_cap:
                self._geometry.popitem(last=False)
        return geo

    def _resolve_blob(self, scene, geo, request: DecodeRequest):
        if request.box is not None:
            b = request.box
            x0, y0 = max(b.x0, 0), max(b.y0, 0)
            x1, y1 = min(b.x1, scene.width), min(b.y1, scene.height)
            if x1 <= x0 or y1 <= y0:
                raise MalformedPromptError("box lies outside the image")
            best = None
            best_overlap = 0
            for i, mask in enumerate(geo.masks):
                overlap = int(mask[y0:y1, x0:x1].sum())
                if overlap > best_overlap:
                    best = i
                    best_overlap = overlap
            return best
        for p in request.points:
            if p.label != 1:
                continue
            px, py = int(p.x), int(p.y)
            if not (0 <= px < scene.width and 0 <= py < scene.height):
                raise MalformedPromptError(f"point ({p.x}, {p.y}) outside the image")
            idx = int(geo.owners[py, px])
            return idx if idx >= 0 else None
        raise MalformedPromptError("decode request has no positive point")

    def _resolve_text(self, scene: SyntheticScene, text: str):
        names = dict(scene.class_names)
        if text in names:
            return names[text]
        # registered names act as vocabulary: longest embedded name wins
        hits = [(len(k), k) for k in names if k and k in text]
        if not hits:
            return None
        return names[max(hits)[1]]


# ===== scene generation =====


def random_scene(
    rng: np.random.Generator,
    *,
    width: int = 256,
    height: int = 256,
    n_targets: int,
    n_distractors: int = 0,
    n_embedded: int = 0,
    target_class: int = 1,
    distractor_class: int = 2,
    radius_range: tuple[float, float] = (7.0, 14.0),
    host_radius_range: tuple[float, float] = (12.0, 16.0),
    embedded_radius: float = 3.5,
    noise_sigma: float = 0.05,
    class_names: dict[str, int] | None = None,
    text_halo: int = 1,
    name: str = "",
) -> SyntheticScene:
    """Random non-overlapping scene; optional distractors embedded in targets.

    Embedded distractors sit in the lower half of their host target and are
    fully covered by the host ellipse. Placement is rejection-sampled; the
    canvas must be large enough for the requested blob count.
    """
    if n_embedded > n_targets:
        raise ValueError("each embedded distractor needs its own host target")
    placed: list[tuple[float, float, float]] = []  # cx, cy, clearance radius
    blobs: list[Blob] = []
    margin = 2.0

    def place(rlo: float, rhi: float, class_id: int) -> Blob:
        for _ in range(4000):
            rx = float(rng.uniform(rlo, rhi))
            ry = float(rng.uniform(rlo, rhi))
            r = max(rx, ry)
            cx = float(rng.uniform(r + 1.0, width - r - 2.0))
            cy = float(rng.uniform(r + 1.0, height - r - 2.0))
            ok = True
            for px, py, pr in placed:
                if (cx - px) ** 2 + (cy - py) ** 2 < (r + pr + margin) ** 2:
                    ok = False
                    break
            if ok:
                placed.append((cx, cy, r))
                return Blob(cx=cx, cy=cy, rx=rx, ry=ry, class_id=class_id)
        raise ValueError(
            f"could not place blob after 4000 attempts ({len(placed)} placed, "
            f"canvas {width}x{height})"
        )

    hosts: list[Blob] = []
    for i in range(n_targets):
        if i < n_embedded:
            b = place(host_radius_range[0], host_radius_range[1], target_class)
            hosts.append(b)
        else:
            b = place(radius_range[0], radius_range[1], target_class)
        blobs.append(b)
    for _ in range(n_distractors):
        blobs.append(place(radius_range[0], radius_range[1], distractor_class))
    for host in hosts:
        # lower half of the host, fully inside the ellipse
        ey = host.cy + 0.45 * host.ry
        blobs.append(
            Blob(cx=host.cx, cy=ey, rx=embedded_radius, ry=embedded_radius,
                 class_id=distractor_class)
        )

    if class_names is None:
        class_names = {"disc": target_class, "blot": distractor_class}
    return SyntheticScene(
        width=width,
        height=height,
        blobs=tuple(blobs),
        class_names=tuple(sorted(class_names.items())),
        noise_sigma=noise_sigma,
        text_halo=text_halo,
        name=name,
    )


def exemplar_boxes(scene: SyntheticScene, class_id: int, k: int = 1) -> list[Box]:
    """Tight boxes around the first k rasterized blobs of a class."""
    out = []
    for i, b in enumerate(scene.blobs):
        if b.class_id != class_id:
            continue
        bb = mask_bbox(blob_mask(scene, i))
        if bb is not None:
            out.append(bb)
        if len(out) == k:
            break
    if len(out) < k:
        raise ValueError(f"scene has fewer than {k} blobs of class {class_id}")
    return out


# ===== bundles and manifests =====


def load_scenes(path: str) -> list[SyntheticScene]:
    """Read a scene bundle: either one scene object or {"scenes": [...]}."""
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict) and "scenes" in data:
        return [SyntheticScene.from_dict(d) for d in data["scenes"]]
    return [SyntheticScene.from_dict(data)]


def save_scenes(scenes: list[SyntheticScene], path: str) -> None:
    with open(path, "w") as f:
        json.dump({"scenes": [s.to_dict() for s in scenes]}, f, indent=1)
