"""Classic image operations used by the counting pipelines.

All operations are deterministic: component labels follow raster-scan
discovery order, tie-breaks are specified, and float maps are quantized
to 256 bins with a single shared rule before thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Box
from .errors import NoComponentError

# ===== Otsu thresholding =====


def otsu_threshold(histogram: np.ndarray) -> int:
    """Between-class-variance argmax over a 256-bin histogram.

    The threshold t assigns bins <= t to class 0. Ties resolve to the
    smallest t; a histogram with a single occupied bin returns that bin.
    Comparisons use exact integer arithmetic so near-ties cannot flip
    on rounding.
    """
    hist = np.asarray(histogram)
    if hist.shape != (256,):
        raise ValueError(f"histogram must have shape (256,), got {hist.shape}")
    if np.any(hist < 0):
        raise ValueError("histogram counts must be non-negative")
    counts = [int(c) for c in hist]
    total = sum(counts)
    if total < 1:
        raise ValueError("histogram is empty")

    occupied = [i for i, c in enumerate(counts) if c > 0]
    if len(occupied) == 1:
        return occupied[0]

    # sigma_b^2(t) is proportional to (m*total - mT*w0)^2 / (w0*w1); compare
    # candidates by cross-multiplication to stay exact.
    m_total = sum(i * c for i, c in enumerate(counts))
    best_t = 0
    best_num = -1
    best_den = 1
    w0 = 0
    m = 0
    for t in range(256):
        w0 += counts[t]
        m += t * counts[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        num = (m * total - m_total * w0) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_num = num
            best_den = den
            best_t = t
    return best_t


def quantize256(values: np.ndarray) -> np.ndarray:
    """Map floats in [0, 1] onto bins 0..255 (round to nearest level)."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(
        np.uint8
    )


def histogram256(values: np.ndarray) -> np.ndarray:
    return np.bincount(quantize256(values).ravel(), minlength=256)


def binarize(values: np.ndarray, threshold: float) -> np.ndarray:
    """Strictly-greater threshold on a normalized map."""
    return np.asarray(values) > threshold


def otsu_binarize(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Otsu over the quantized map; returns (mask, threshold in [0,1]).

    The mask keeps pixels whose bin exceeds the Otsu bin, which matches
    ``binarize(values, (t + 0.5) / 255)`` for quantized inputs.
    """
    bins = quantize256(values)
    t = otsu_threshold(np.bincount(bins.ravel(), minlength=256))
    return bins > t, (t + 0.5) / 255.0


# ===== connected components =====


@dataclass(frozen=True)
class LabelMap:
    """int32 component labels, 0 = background, 1..count in discovery order."""

    labels: np.ndarray
    count: int


def connected_components(mask: np.ndarray, connectivity: int = 8) -> LabelMap:
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    labels, count = kernels.label_components(m, connectivity)
    return LabelMap(labels=labels, count=int(count))


def largest_component(label_map: LabelMap) -> np.ndarray:
    """Mask of the largest component; area ties go to the smallest label."""
    if label_map.count == 0:
        raise NoComponentError("label map has no components")
    areas = np.bincount(label_map.labels.ravel(), minlength=label_map.count + 1)[1:]
    winner = int(np.argmax(areas)) + 1
    return label_map.labels == winner


# ===== contour tracing and splitting =====


def trace_contour(component: np.ndarray) -> np.ndarray:
    """Moore-neighbor boundary trace, clockwise from the raster-first pixel.

    Returns an (n, 2) array of (x, y) pixel coordinates without the
    duplicated closing point.
    """
    if component.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {component.shape}")
    m = np.ascontiguousarray(component, dtype=np.uint8)
    if not m.any():
        raise NoComponentError("cannot trace an empty mask")
    return kernels.moore_trace(m)


def split_contour(contour: np.ndarray, k: int) -> list[np.ndarray]:
    """Split into k contiguous runs of ceil(n/k) or floor(n/k) points."""
    n = len(contour)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"cannot split {n} points into {k} runs")
    base, rem = divmod(n, k)
    runs = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        runs.append(np.asarray(contour[start : start + size]))
        start += size
    return runs


def boxes_from_runs(runs: list[np.ndarray], width: int, height: int) -> list[Box]:
    """Tight half-open boxes around runs, clamped to the image."""
    boxes = []
    for run in runs:
        pts = np.asarray(run)
        if pts.size == 0:
            raise ValueError("cannot box an empty run")
        x0 = int(pts[:, 0].min())
        y0 = int(pts[:, 1].min())
        x1 = int(pts[:, 0].max()) + 1
        y1 = int(pts[:, 1].max()) + 1
        if x1 <= x0:  # zero-area guard: grow the max edge
            x1 = x0 + 1
        if y1 <= y0:
            y1 = y0 + 1
        boxes.append(Box(x0, y0, x1, y1).clamp(width, height))
    return boxes


# ===== greedy non-maximum suppression =====


def nms(boxes: list[Box], scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy NMS over half-open boxes.

    Boxes are visited in descending score order (ties to the lower index);
    a box is suppressed when its IoU with an already-kept box exceeds the
    threshold. Returns kept indices in acceptance order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) != scores.shape[0]:
        raise ValueError(f"{len(boxes)} boxes vs {scores.shape[0]} scores")
    if len(boxes) == 0:
        return []
    x0 = np.array([b.x0 for b in boxes], dtype=np.float64)
    y0 = np.array([b.y0 for b in boxes], dtype=np.float64)
    x1 = np.array([b.x1 for b in boxes], dtype=np.float64)
    y1 = np.array([b.y1 for b in boxes], dtype=np.float64)
    areas = (x1 - x0) * (y1 - y0)

    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    while order.size > 0:
        i = int(order[0])
        keep.append(i)
        rest = order[1:]
        iw = np.maximum(
            0.0, np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        )
        ih = np.maximum(
            0.0, np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        )
        inter = iw * ih
        iou = inter / (areas[i] + areas[rest] - inter)
        order = rest[iou <= iou_threshold]
    return keep
