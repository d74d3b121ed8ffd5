"""Similarity machinery tests with naive-loop oracles."""

import numpy as np
import pytest

from promptcount.core import FeatureMap
from promptcount.errors import EmptyMaskError
from promptcount.similarity import (
    cosine_similarity_map,
    fuse_exemplar_maps,
    mask_score,
    masked_average_pool,
    upsample_and_normalize,
)

# ===== oracles =====


def pooled_oracle(values, stride, mask):
    """Literal per-cell coverage count, then mean of selected cells."""
    h, w = mask.shape
    gh, gw = values.shape[:2]
    selected = []
    for cy in range(gh):
        for cx in range(gw):
            y0, y1 = cy * stride, min((cy + 1) * stride, h)
            x0, x1 = cx * stride, min((cx + 1) * stride, w)
            if y0 >= h or x0 >= w:
                continue
            block = mask[y0:y1, x0:x1]
            if block.sum() * 2 >= block.size:
                selected.append((cy, cx))
    if not selected:
        ys, xs = np.nonzero(mask)
        selected = [(min(int(ys.mean()) // stride, gh - 1), min(int(xs.mean()) // stride, gw - 1))]
    return np.mean([values[cy, cx] for cy, cx in selected], axis=0)


def bilinear_oracle(src, dh, dw):
    sh, sw = src.shape
    out = np.zeros((dh, dw))
    for j in range(dh):
        for i in range(dw):
            y = min(max((j + 0.5) * sh / dh - 0.5, 0.0), sh - 1.0)
            x = min(max((i + 0.5) * sw / dw - 0.5, 0.0), sw - 1.0)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, sh - 1), min(x0 + 1, sw - 1)
            fy, fx = y - y0, x - x0
            out[j, i] = (
                src[y0, x0] * (1 - fy) * (1 - fx)
                + src[y0, x1] * (1 - fy) * fx
                + src[y1, x0] * fy * (1 - fx)
                + src[y1, x1] * fy * fx
            )
    return out


def _features(gh=3, gw=4, c=5, stride=4, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureMap(values=rng.normal(size=(gh, gw, c)).astype(np.float32), stride=stride)


# ===== masked average pooling =====


def test_pool_single_full_cell():
    f = _features()
    mask = np.zeros((12, 16), dtype=bool)
    mask[0:4, 4:8] = True  # exactly cell (0, 1)
    out = masked_average_pool(f, mask)
    np.testing.assert_allclose(out, f.values[0, 1].astype(np.float64), rtol=0, atol=0)


def test_pool_half_covered_cell_is_selected():
    f = _features()
    mask = np.zeros((12, 16), dtype=bool)
    mask[0:2, 0:4] = True  # covers exactly 50% of cell (0, 0)
    out = masked_average_pool(f, mask)
    np.testing.assert_allclose(out, f.values[0, 0].astype(np.float64))


def test_pool_centroid_fallback_for_tiny_mask():
    f = _features()
    mask = np.zeros((12, 16), dtype=bool)
    mask[9, 14] = True  # 1 px, cell (2, 3)
    out = masked_average_pool(f, mask)
    np.testing.assert_allclose(out, f.values[2, 3].astype(np.float64))


def test_pool_matches_oracle_random():
    rng = np.random.default_rng(42)
    for _ in range(40):
        stride = int(rng.integers(2, 6))
        gh, gw = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        h = stride * gh - int(rng.integers(0, stride))
        w = stride * gw - int(rng.integers(0, stride))
        f = FeatureMap(
            values=rng.normal(size=(gh, gw, 4)).astype(np.float32), stride=stride
        )
        mask = rng.random((h, w)) < 0.3
        if not mask.any():
            mask[0, 0] = True
        np.testing.assert_allclose(
            masked_average_pool(f, mask),
            pooled_oracle(f.values.astype(np.float64), stride, mask),
            atol=1e-12,
        )


def test_pool_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        masked_average_pool(_features(), np.zeros((12, 16), dtype=bool))


# ===== cosine similarity map =====


def test_cosine_one_hot_features():
    values = np.zeros((2, 2, 3), dtype=np.float32)
    values[0, 0, 1] = 1.0
    values[0, 1, 2] = 1.0
    values[1, 0, 1] = 2.0  # scaled, same direction
    # cell (1,1) stays all-zero
    f = FeatureMap(values=values, stride=4)
    sim = cosine_similarity_map(f, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(sim, [[1.0, 0.0], [1.0, 0.0]], atol=1e-12)


def test_cosine_scale_invariance_and_range():
    f = _features(seed=3)
    r = np.random.default_rng(4).normal(size=f.channels)
    a = cosine_similarity_map(f, r)
    b = cosine_similarity_map(f, 7.5 * r)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.all(a <= 1.0) and np.all(a >= -1.0)


def test_cosine_zero_reference_raises():
    with pytest.raises(ValueError):
        cosine_similarity_map(_features(), np.zeros(5))
    with pytest.raises(ValueError):
        cosine_similarity_map(_features(), np.zeros(3))  # wrong length


# ===== fusion =====


def test_fuse_mean():
    a = np.full((2, 2), 0.2)
    b = np.full((2, 2), 0.4)
    np.testing.assert_allclose(fuse_exemplar_maps([a, b]), np.full((2, 2), 0.3))
    np.testing.assert_allclose(fuse_exemplar_maps([a]), a)
    with pytest.raises(ValueError):
        fuse_exemplar_maps([])
    with pytest.raises(ValueError):
        fuse_exemplar_maps([a, np.zeros((3, 3))])


# ===== upsample + normalize =====


def test_upsample_constant_map_normalizes_to_zeros():
    out = upsample_and_normalize(np.full((3, 3), 0.7), 9, 9)
    np.testing.assert_array_equal(out, np.zeros((9, 9)))


def test_upsample_bounds_and_minmax():
    rng = np.random.default_rng(8)
    src = rng.normal(size=(5, 7))
    out = upsample_and_normalize(src, 21, 15)
    assert out.shape == (15, 21)
    assert out.min() == 0.0 and out.max() == 1.0


def test_upsample_matches_oracle():
    rng = np.random.default_rng(9)
    src = rng.normal(size=(4, 6))
    up = bilinear_oracle(src, 13, 17)
    lo, hi = up.min(), up.max()
    expected = (up - lo) / (hi - lo)
    np.testing.assert_allclose(upsample_and_normalize(src, 17, 13), expected, atol=1e-12)


def test_upsample_rejects_downsampling():
    with pytest.raises(ValueError):
        upsample_and_normalize(np.zeros((4, 4)), 3, 8)


def test_upsample_identity_size():
    src = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = upsample_and_normalize(src, 2, 2)
    np.testing.assert_allclose(out, src / 3.0, atol=1e-12)


# ===== mask score =====


def test_mask_score_hand_case():
    sim = np.array([[0.0, 1.0], [0.5, 0.5]])
    mask = np.array([[True, True], [False, False]])
    assert mask_score(sim, mask) == pytest.approx(0.5)


def test_mask_score_errors():
    sim = np.zeros((2, 2))
    with pytest.raises(EmptyMaskError):
        mask_score(sim, np.zeros((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        mask_score(sim, np.zeros((3, 3), dtype=bool))
