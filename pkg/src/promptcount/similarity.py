"""Reference embeddings and similarity maps.

A reference embedding is the masked average of feature cells covered by
an exemplar mask. Cosine similarity against every cell yields a raw map
in [-1, 1] at cell resolution; maps from several exemplars are fused by
mean; the fused map is bilinearly upsampled to pixel resolution and
min-max normalized to [0, 1] before any thresholding or scoring.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .core import FeatureMap
from .errors import EmptyMaskError


def _cell_fractions(mask: np.ndarray, stride: int, grid_h: int, grid_w: int) -> np.ndarray:
    """Fraction of each cell's pixels covered by the mask (edge cells may be partial)."""
    h, w = mask.shape
    row_idx = np.arange(0, h, stride)
    col_idx = np.arange(0, w, stride)
    m = mask.astype(np.float64)
    covered = np.add.reduceat(np.add.reduceat(m, row_idx, axis=0), col_idx, axis=1)
    row_sizes = np.minimum(row_idx + stride, h) - row_idx
    col_sizes = np.minimum(col_idx + stride, w) - col_idx
    sizes = row_sizes[:, None] * col_sizes[None, :]
    frac = covered / sizes
    out = np.zeros((grid_h, grid_w), dtype=np.float64)
    out[: frac.shape[0], : frac.shape[1]] = frac[:grid_h, :grid_w]
    return out


def masked_average_pool(features: FeatureMap, mask: np.ndarray) -> np.ndarray:
    """Mean feature over cells at least half covered by the mask.

    Falls back to the single cell containing the mask centroid when no
    cell reaches 50% coverage (tiny exemplars).
    """
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    if not mask.any():
        raise EmptyMaskError("cannot pool features over an empty mask")
    frac = _cell_fractions(mask, features.stride, features.grid_h, features.grid_w)
    selected = frac >= 0.5
    if not selected.any():
        ys, xs = np.nonzero(mask)
        cy = min(int(ys.mean()) // features.stride, features.grid_h - 1)
        cx = min(int(xs.mean()) // features.stride, features.grid_w - 1)
        selected = np.zeros_like(frac, dtype=bool)
        selected[cy, cx] = True
    cells = features.values[selected]
    return cells.astype(np.float64).mean(axis=0)


def cosine_similarity_map(features: FeatureMap, reference: np.ndarray) -> np.ndarray:
    """Per-cell cosine similarity in [-1, 1]; zero-norm cells map to 0."""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim != 1 or ref.shape[0] != features.channels:
        raise ValueError(
            f"reference must have shape ({features.channels},), got {ref.shape}"
        )
    rnorm = float(np.linalg.norm(ref))
    if rnorm == 0.0:
        raise ValueError("reference embedding has zero norm")
    vals = features.values.astype(np.float64)
    dots = vals @ ref
    norms = np.linalg.norm(vals, axis=2)
    out = np.zeros_like(dots)
    nz = norms > 0
    out[nz] = dots[nz] / (norms[nz] * rnorm)
    return np.clip(out, -1.0, 1.0)


def fuse_exemplar_maps(maps: list[np.ndarray]) -> np.ndarray:
    """Mean of per-exemplar similarity maps."""
    if not maps:
        raise ValueError("cannot fuse an empty list of maps")
    first = np.asarray(maps[0], dtype=np.float64)
    for m in maps[1:]:
        if np.asarray(m).shape != first.shape:
            raise ValueError("similarity maps must share one shape")
    return np.mean([np.asarray(m, dtype=np.float64) for m in maps], axis=0)


def upsample_and_normalize(sim: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear upsample to (height, width), then min-max normalize to [0, 1].

    A constant map normalizes to all zeros.
    """
    src = np.asarray(sim, dtype=np.float64)
    if src.ndim != 2:
        raise ValueError(f"similarity map must be 2D, got shape {src.shape}")
    if height < src.shape[0] or width < src.shape[1]:
        raise ValueError(
            f"target {width}x{height} smaller than source {src.shape[1]}x{src.shape[0]}"
        )
    up = kernels.bilinear_resize(src, height, width)
    lo = float(up.min())
    hi = float(up.max())
    if hi - lo <= 0.0:
        return np.zeros_like(up)
    return (up - lo) / (hi - lo)


def mask_score(sim_normalized: np.ndarray, mask: np.ndarray) -> float:
    """Mean normalized similarity over the mask's pixels."""
    if sim_normalized.shape != mask.shape:
        raise ValueError(
            f"map shape {sim_normalized.shape} != mask shape {mask.shape}"
        )
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("mask score undefined for an empty mask")
    return float(sim_normalized[mask].sum() / n)
