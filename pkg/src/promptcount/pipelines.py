"""Counting pipelines over a promptable-segmentation backend.

The count of a prompt-specified object class is the number of accepted
masks. The vanilla pipeline decodes a full point grid and keeps masks
whose mean normalized similarity to the references beats a threshold.
The prior-guided pipeline instead schedules prompts with three priors:

- similarity prior: grid points are labeled by Otsu-binarizing the
  normalized similarity map; negative points are never decoded;
- segment prior: the union of accepted masks is tracked, and points
  already covered by it are pruned; empty batches are skipped without
  touching the backend;
- semantic prior: the fused reference embedding rides along with every
  decode request so the backend can reject off-class masks.

Batches are pruned against a snapshot of the segment map taken when the
batch starts, so decodes inside one batch may run in parallel; counts are
invariant to the batch size because duplicates are removed by mask NMS
either way.

Dedup policy: the vanilla pipeline deduplicates once, globally, greedy by
backend quality (ties to arrival order); the prior-guided pipeline must
deduplicate incrementally against the accepted set because the segment
map depends on it. With equal qualities the two orders coincide.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .backend import Backend, DecodeRequest, ScoredMask
from .core import Box, FeatureMap, PromptPoint, PromptSet, mask_bbox, mask_iou, rle_encode
from .errors import (
    CapabilityError,
    MalformedPromptError,
    NoReferenceError,
    PromptCountError,
)
from .imageops import (
    boxes_from_runs,
    connected_components,
    largest_component,
    nms,
    otsu_binarize,
    split_contour,
    trace_contour,
)
from .similarity import (
    cosine_similarity_map,
    fuse_exemplar_maps,
    mask_score,
    masked_average_pool,
    upsample_and_normalize,
)

logger = logging.getLogger(__name__)

GRID_SIZE_MIN = 32
GRID_SIZE_MAX = 128
VANILLA_GRID_SIZE = 32


@dataclass
class PipelineConfig:
    epsilon: float = 0.5
    points_per_side: int | None = None  # None: 32 for vanilla, auto for prior mode
    points_per_batch: int = 64
    mask_nms_iou: float = 0.7
    min_mask_area: int = 10
    min_quality: float = 0.5
    contour_splits: int = 8
    box_nms_iou: float = 0.5
    use_similarity_prior: bool = True
    use_segment_prior: bool = True
    use_semantic_prior: bool = True
    # None: the score filter runs in the vanilla pipeline only. The priors
    # replace it in prior-guided mode; force True/False to ablate.
    score_filter: bool | None = None
    include_exemplar_masks: bool = True
    use_reference_selection: bool = True  # text pipeline stage 1

    def __post_init__(self):
        if self.points_per_side is not None and self.points_per_side < 2:
            raise ValueError("points_per_side must be >= 2")
        if self.points_per_batch < 1:
            raise ValueError("points_per_batch must be >= 1")
        for name in ("mask_nms_iou", "box_nms_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.min_mask_area < 0:
            raise ValueError("min_mask_area must be >= 0")
        if self.contour_splits < 1:
            raise ValueError("contour_splits must be >= 1")


@dataclass
class RunStats:
    decoder_calls: int = 0
    points_pruned_by_similarity_prior: int = 0
    points_pruned_by_segment_prior: int = 0
    batches_skipped: int = 0
    wall_time: float = 0.0

    def to_dict(self, with_timing: bool = True) -> dict:
        out = {
            "decoder_calls": self.decoder_calls,
            "points_pruned_by_similarity_prior": self.points_pruned_by_similarity_prior,
            "points_pruned_by_segment_prior": self.points_pruned_by_segment_prior,
            "batches_skipped": self.batches_skipped,
        }
        if with_timing:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class CountResult:
    count: int
    masks: list[ScoredMask]
    stats: RunStats
    similarity: np.ndarray | None = None  # normalized map used for scoring

    def to_json(self, with_timing: bool = True) -> str:
        """Canonical serialization; timing is a measurement, not a result."""
        payload = {
            "count": self.count,
            "masks": [
                {
                    "rle": rle_encode(m.mask).to_dict(),
                    "score": m.score,
                    "quality": m.quality,
                }
                for m in self.masks
            ],
            "stats": self.stats.to_dict(with_timing=with_timing),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class GridSpec:
    t: int
    o_size: int  # 0 when no exemplar size informed the choice
    batches: tuple[tuple[PromptPoint, ...], ...]

    @property
    def n_points(self) -> int:
        return sum(len(b) for b in self.batches)


def auto_grid_size(o_size: int) -> int:
    """Grid side from the smallest exemplar side: (32 // o + 1) * 32, clamped."""
    if o_size < 1:
        raise ValueError(f"o_size must be >= 1, got {o_size}")
    return min(GRID_SIZE_MAX, max(GRID_SIZE_MIN, (32 // o_size + 1) * 32))


def grid_points(t: int, width: int, height: int) -> tuple[PromptPoint, ...]:
    """Row-major cell-center points, all positive, strictly inside the image."""
    if t < 1:
        raise ValueError("t must be >= 1")
    xs = (np.arange(t) + 0.5) * (width / t)
    ys = (np.arange(t) + 0.5) * (height / t)
    return tuple(
        PromptPoint(float(x), float(y), 1) for y in ys for x in xs
    )


def plan_grid(t: int, width: int, height: int, points_per_batch: int, o_size: int = 0) -> GridSpec:
    pts = grid_points(t, width, height)
    batches = tuple(
        tuple(pts[i : i + points_per_batch])
        for i in range(0, len(pts), points_per_batch)
    )
    return GridSpec(t=t, o_size=o_size, batches=batches)


# ===== reference stage =====


@dataclass
class ReferenceSet:
    masks: list[np.ndarray]
    embeddings: list[np.ndarray]
    sim: np.ndarray  # normalized (h, w)
    fused_embedding: np.ndarray | None
    feature_id: str
    features: FeatureMap
    qualities: list[float]
    decoder_calls: int
    warnings: list[str]


def reference_from_prompts(
    backend: Backend, image: np.ndarray, prompts: PromptSet
) -> ReferenceSet:
    """Decode exemplar prompts into reference masks and a fused similarity map.

    Prompts that produce no mask are skipped with a warning; producing no
    reference at all is an error.
    """
    if not prompts.points and not prompts.boxes:
        raise MalformedPromptError("reference stage needs point or box prompts")
    h, w = image.shape[:2]
    fid, features = backend.encode_image(image)
    masks: list[np.ndarray] = []
    qualities: list[float] = []
    warnings: list[str] = []
    calls = 0

    def handle(request: DecodeRequest, label: str):
        nonlocal calls
        calls += 1
        out = backend.decode_masks(request)
        if not out:
            warnings.append(f"exemplar {label} produced no mask; skipped")
            logger.warning("%s", warnings[-1])
            return
        best = max(out, key=lambda m: m.quality)
        masks.append(best.mask)
        qualities.append(best.quality)

    for box in prompts.boxes:
        handle(DecodeRequest(feature_id=fid, box=box), f"box {box.as_tuple()}")
    for p in prompts.points:
        if p.label != 1:
            warnings.append(f"negative exemplar point ({p.x}, {p.y}) ignored")
            logger.warning("%s", warnings[-1])
            continue
        handle(
            DecodeRequest(feature_id=fid, points=(p,)), f"point ({p.x}, {p.y})"
        )

    if not masks:
        raise NoReferenceError("no exemplar prompt produced a mask")

    embeddings = [masked_average_pool(features, m) for m in masks]
    maps = [cosine_similarity_map(features, e) for e in embeddings]
    fused = fuse_exemplar_maps(maps)
    sim = upsample_and_normalize(fused, w, h)
    fused_embedding = np.mean(embeddings, axis=0)
    return ReferenceSet(
        masks=masks,
        embeddings=embeddings,
        sim=sim,
        fused_embedding=fused_embedding,
        feature_id=fid,
        features=features,
        qualities=qualities,
        decoder_calls=calls,
        warnings=warnings,
    )


# ===== shared grid engine =====


def _o_size_from_refs(refs: ReferenceSet, input_resolution: int, width: int, height: int) -> int:
    sides = []
    for m in refs.masks:
        bb = mask_bbox(m)
        if bb is not None:
            sides.append(min(bb.width, bb.height))
    if not sides:
        raise NoReferenceError("reference masks are empty")
    scale = input_resolution / max(width, height) if input_resolution > 0 else 1.0
    return max(1, round(min(sides) * scale))


class _AcceptedSet:
    """Accepted masks plus their union map and bbox prefilter for dedup."""

    def __init__(self, shape):
        self.masks: list[ScoredMask] = []
        self.bboxes: list[Box] = []
        self.segment_map = np.zeros(shape, dtype=bool)

    def duplicates(self, mask: np.ndarray, bbox: Box, thr: float) -> bool:
        for m, bb in zip(self.masks, self.bboxes):
            ix = min(bbox.x1, bb.x1) - max(bbox.x0, bb.x0)
            iy = min(bbox.y1, bb.y1) - max(bbox.y0, bb.y0)
            if ix <= 0 or iy <= 0:
                continue
            if mask_iou(mask, m.mask) > thr:
                return True
        return False

    def add(self, sm: ScoredMask, bbox: Box):
        self.masks.append(sm)
        self.bboxes.append(bbox)
        self.segment_map |= sm.mask


def _dedup_global(cands: list[ScoredMask], thr: float, shape) -> _AcceptedSet:
    """One greedy pass by quality (ties to arrival order)."""
    order = sorted(range(len(cands)), key=lambda i: (-cands[i].quality, i))
    acc = _AcceptedSet(shape)
    for i in order:
        bb = mask_bbox(cands[i].mask)
        if bb is None:
            continue
        if not acc.duplicates(cands[i].mask, bb, thr):
            acc.add(cands[i], bb)
    return acc


def _passes_filters(sm: ScoredMask, cfg: PipelineConfig) -> bool:
    return sm.quality >= cfg.min_quality and sm.area >= cfg.min_mask_area


def vanilla_count(
    backend: Backend, image: np.ndarray, prompts: PromptSet, cfg: PipelineConfig | None = None
) -> CountResult:
    """Full-grid counting: decode everything, dedup, filter by similarity."""
    cfg = cfg or PipelineConfig()
    start = time.perf_counter()
    h, w = image.shape[:2]
    refs = reference_from_prompts(backend, image, prompts)
    stats = RunStats(decoder_calls=refs.decoder_calls)
    t = cfg.points_per_side or VANILLA_GRID_SIZE
    grid = plan_grid(t, w, h, cfg.points_per_batch)

    cands: list[ScoredMask] = []
    if cfg.include_exemplar_masks:
        cands.extend(
            ScoredMask(mask=m, quality=q) for m, q in zip(refs.masks, refs.qualities)
        )
    try:
        for batch in grid.batches:
            for p in batch:
                stats.decoder_calls += 1
                cands.extend(
                    backend.decode_masks(DecodeRequest(feature_id=refs.feature_id, points=(p,)))
                )
    except PromptCountError as exc:
        stats.wall_time = time.perf_counter() - start
        exc.partial_stats = stats
        raise

    accepted = _dedup_global(cands, cfg.mask_nms_iou, (h, w))
    use_score = cfg.score_filter if cfg.score_filter is not None else True
    final: list[ScoredMask] = []
    for sm in accepted.masks:
        if not _passes_filters(sm, cfg):
            continue
        sm.score = mask_score(refs.sim, sm.mask)
        if use_score and not sm.score > cfg.epsilon:
            continue
        final.append(sm)

    stats.wall_time = time.perf_counter() - start
    return CountResult(count=len(final), masks=final, stats=stats, similarity=refs.sim)


def prior_guided_count(
    backend: Backend, image: np.ndarray, prompts: PromptSet, cfg: PipelineConfig | None = None
) -> CountResult:
    """Prior-guided counting: label the grid, prune covered points, decode the rest."""
    cfg = cfg or PipelineConfig()
    start = time.perf_counter()
    refs = reference_from_prompts(backend, image, prompts)
    result = _prior_grid_run(backend, image, refs, cfg, start)
    return result


def _prior_grid_run(
    backend: Backend,
    image: np.ndarray,
    refs: ReferenceSet,
    cfg: PipelineConfig,
    start: float,
) -> CountResult:
    h, w = image.shape[:2]
    caps = backend.capabilities()
    stats = RunStats(decoder_calls=refs.decoder_calls)

    if cfg.points_per_side is not None:
        t, o_size = cfg.points_per_side, 0
    elif refs.masks:
        o_size = _o_size_from_refs(refs, caps.input_resolution, w, h)
        t = auto_grid_size(o_size)
    else:  # text-direct mode: no exemplar size to go by
        t, o_size = VANILLA_GRID_SIZE, 0
    grid = plan_grid(t, w, h, cfg.points_per_batch, o_size=o_size)

    label_mask = None
    if cfg.use_similarity_prior:
        label_mask, _ = otsu_binarize(refs.sim)
        if not label_mask.any():
            logger.warning("similarity prior labeled no positive grid region")

    semantic = None
    if cfg.use_semantic_prior and refs.fused_embedding is not None:
        if caps.supports_semantic_prior:
            semantic = refs.fused_embedding.astype(np.float32)
        else:
            logger.warning("backend lacks semantic-prior support; prior disabled")

    acc = _AcceptedSet((h, w))
    if cfg.include_exemplar_masks:
        for m, q in zip(refs.masks, refs.qualities):
            sm = ScoredMask(mask=m, quality=q)
            bb = mask_bbox(sm.mask)
            if bb is None or not _passes_filters(sm, cfg):
                continue
            if not acc.duplicates(sm.mask, bb, cfg.mask_nms_iou):
                acc.add(sm, bb)

    try:
        for batch in grid.batches:
            survivors = []
            covered = acc.segment_map  # snapshot semantics: batch decodes are independent
            for p in batch:
                px, py = int(p.x), int(p.y)
                if label_mask is not None and not label_mask[py, px]:
                    stats.points_pruned_by_similarity_prior += 1
                    continue
                if cfg.use_segment_prior and covered[py, px]:
                    stats.points_pruned_by_segment_prior += 1
                    continue
                survivors.append(p)
            if not survivors:
                stats.batches_skipped += 1
                continue
            for p in survivors:
                stats.decoder_calls += 1
                out = backend.decode_masks(
                    DecodeRequest(
                        feature_id=refs.feature_id, points=(p,), semantic=semantic
                    )
                )
                for sm in out:
                    if not _passes_filters(sm, cfg):
                        continue
                    bb = mask_bbox(sm.mask)
                    if bb is None:
                        continue
                    if acc.duplicates(sm.mask, bb, cfg.mask_nms_iou):
                        continue
                    acc.add(sm, bb)
    except PromptCountError as exc:
        stats.wall_time = time.perf_counter() - start
        exc.partial_stats = stats
        raise

    use_score = cfg.score_filter if cfg.score_filter is not None else False
    final = []
    for sm in acc.masks:
        sm.score = mask_score(refs.sim, sm.mask)
        if use_score and not sm.score > cfg.epsilon:
            continue
        final.append(sm)
    if not final:
        logger.warning("prior-guided run accepted no masks; count is 0")

    stats.wall_time = time.perf_counter() - start
    return CountResult(count=len(final), masks=final, stats=stats, similarity=refs.sim)


# ===== text pipeline =====


def select_reference_boxes_from_text(
    backend: Backend, image: np.ndarray, text: str, cfg: PipelineConfig | None = None
) -> tuple[list[Box], np.ndarray]:
    """Stage 1: turn a coarse text-similarity map into exemplar boxes.

    Binarize the normalized map with Otsu, take the largest connected
    component, trace its contour, split the contour into balanced runs,
    box each run, and keep the best-scoring boxes after NMS.
    """
    cfg = cfg or PipelineConfig()
    caps = backend.capabilities()
    if not caps.supports_text:
        raise CapabilityError("backend does not support text prompts")
    h, w = image.shape[:2]
    fid, _ = backend.encode_image(image)
    coarse = backend.text_similarity(fid, text)
    sim_text = upsample_and_normalize(coarse, w, h)

    fg, _ = otsu_binarize(sim_text)
    if not fg.any():
        raise NoReferenceError(f"text {text!r} produced no foreground region")
    component = largest_component(connected_components(fg, 8))
    contour = trace_contour(component)
    k = min(cfg.contour_splits, len(contour))
    runs = split_contour(contour, k)
    boxes = boxes_from_runs(runs, w, h)
    scores = np.array(
        [sim_text[b.y0 : b.y1, b.x0 : b.x1].mean() for b in boxes], dtype=np.float64
    )
    keep = nms(boxes, scores, cfg.box_nms_iou)
    return [boxes[i] for i in keep], sim_text


def text_count(
    backend: Backend,
    image: np.ndarray,
    text: str,
    cfg: PipelineConfig | None = None,
    mode: str = "prior",
) -> CountResult:
    """Stage 2: count with the exemplar boxes selected from the text map.

    With cfg.use_reference_selection off, the raw upsampled text map is used
    directly as the similarity map for a prior-guided grid run (no reference
    masks, so the semantic prior is unavailable); this exists to measure how
    much the selection stage matters.
    """
    cfg = cfg or PipelineConfig()
    start = time.perf_counter()
    if cfg.use_reference_selection:
        boxes, _ = select_reference_boxes_from_text(backend, image, text, cfg)
        prompts = PromptSet(boxes=tuple(boxes))
        # Selected boxes are hypotheses, not user assertions: their masks
        # must earn acceptance through the grid like everything else.
        cfg = replace(cfg, include_exemplar_masks=False)
        if mode == "vanilla":
            return vanilla_count(backend, image, prompts, cfg)
        return prior_guided_count(backend, image, prompts, cfg)
    if mode != "prior":
        raise ValueError("direct text counting is a prior-guided ablation")
    caps = backend.capabilities()
    if not caps.supports_text:
        raise CapabilityError("backend does not support text prompts")
    h, w = image.shape[:2]
    fid, features = backend.encode_image(image)
    coarse = backend.text_similarity(fid, text)
    sim_text = upsample_and_normalize(coarse, w, h)
    refs = ReferenceSet(
        masks=[],
        embeddings=[],
        sim=sim_text,
        fused_embedding=None,
        feature_id=fid,
        features=features,
        qualities=[],
        decoder_calls=0,
        warnings=[],
    )
    return _prior_grid_run(backend, image, refs, cfg, start)
