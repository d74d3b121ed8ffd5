"""Overlay rendering tests."""

import numpy as np
import pytest
from scipy import ndimage

from promptcount.backend import ScoredMask
from promptcount.viz import FILL_ALPHA, OVERLAY_PALETTE, overlay_count


def flat_image(h: int = 48, w: int = 64, value: int = 120) -> np.ndarray:
    return np.full((h, w, 3), value, dtype=np.uint8)


def disk_mask(h: int, w: int, cx: int, cy: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def test_overlay_shape_dtype_and_input_untouched():
    image = flat_image()
    before = image.copy()
    out = overlay_count(image, [disk_mask(48, 64, 20, 20, 6)])
    assert out.shape == image.shape
    assert out.dtype == np.uint8
    assert np.array_equal(image, before)


def test_fill_blends_and_boundary_is_solid():
    image = flat_image(value=120)
    mask = disk_mask(48, 64, 30, 24, 8)
    out = overlay_count(image, [mask])
    color = OVERLAY_PALETTE[0]

    boundary = mask & ~ndimage.binary_erosion(mask, border_value=0)
    interior = mask & ~boundary
    assert np.array_equal(out[boundary], np.tile(color, (boundary.sum(), 1)))
    expected_fill = np.round((1 - FILL_ALPHA) * 120 + FILL_ALPHA * color)
    assert np.array_equal(out[interior], np.tile(expected_fill, (interior.sum(), 1)))
    assert np.array_equal(out[~mask], np.tile([120, 120, 120], ((~mask).sum(), 1)))


def test_palette_cycles_in_mask_order():
    image = flat_image()
    masks = [disk_mask(48, 64, 12, 12, 4), disk_mask(48, 64, 50, 36, 4)]
    out = overlay_count(image, masks)
    assert np.array_equal(out[12, 12 + 4], OVERLAY_PALETTE[0])
    assert np.array_equal(out[36, 50 + 4], OVERLAY_PALETTE[1])


def test_accepts_scored_masks():
    image = flat_image()
    mask = disk_mask(48, 64, 20, 20, 5)
    scored = ScoredMask(mask=mask, quality=0.9, score=0.8)
    assert np.array_equal(overlay_count(image, [scored]), overlay_count(image, [mask]))


def test_count_badge_changes_pixels_deterministically():
    image = flat_image()
    plain = overlay_count(image, [])
    badged = overlay_count(image, [], count=7)
    assert not np.array_equal(plain, badged)
    assert np.array_equal(badged, overlay_count(image, [], count=7))
    # The badge backdrop paints pure black somewhere near the corner.
    assert (badged[:24, :80] == 0).all(axis=2).any()


def test_mask_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="does not match"):
        overlay_count(flat_image(48, 64), [np.ones((8, 8), dtype=bool)])


def test_non_rgb_image_rejected():
    with pytest.raises(ValueError, match="RGB"):
        overlay_count(np.zeros((48, 64), dtype=np.uint8), [])
