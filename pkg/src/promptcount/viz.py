"""Overlay rendering: translucent mask fills, boundary outlines, count badge."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

OVERLAY_PALETTE = np.array(
    [
        [66, 133, 244],
        [219, 68, 55],
        [244, 180, 0],
        [15, 157, 88],
        [171, 71, 188],
        [255, 112, 67],
        [0, 172, 193],
        [236, 64, 122],
        [124, 179, 66],
        [255, 202, 40],
    ],
    dtype=np.float64,
)

FILL_ALPHA = 0.45


def overlay_count(
    image: np.ndarray, masks, count: int | None = None
) -> np.ndarray:
    """Render masks over the image; returns a new uint8 RGB array.

    ``masks`` is any iterable of boolean (h, w) arrays or objects with a
    ``mask`` attribute (e.g. ScoredMask). Colors cycle a fixed palette in
    mask order, so repeated renders of one result are identical.
    """
    out = np.asarray(image, dtype=np.float64).copy()
    if out.ndim != 3 or out.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {out.shape}")
    arrays = [np.asarray(getattr(m, "mask", m), dtype=bool) for m in masks]
    for i, mask in enumerate(arrays):
        if mask.shape != out.shape[:2]:
            raise ValueError(
                f"mask {i} shape {mask.shape} does not match image {out.shape[:2]}"
            )
        color = OVERLAY_PALETTE[i % len(OVERLAY_PALETTE)]
        out[mask] = (1.0 - FILL_ALPHA) * out[mask] + FILL_ALPHA * color
        boundary = mask & ~ndimage.binary_erosion(mask, border_value=0)
        out[boundary] = color
    rendered = np.clip(np.round(out), 0, 255).astype(np.uint8)
    if count is None:
        return rendered
    img = Image.fromarray(rendered)
    draw = ImageDraw.Draw(img)
    label = f"count: {count}"
    x0, y0, x1, y1 = draw.textbbox((6, 6), label)
    draw.rectangle((x0 - 4, y0 - 3, x1 + 4, y1 + 3), fill=(0, 0, 0))
    draw.text((6, 6), label, fill=(255, 255, 255))
    return np.asarray(img)
