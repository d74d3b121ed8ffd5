"""Hot per-pixel kernels with optional numba acceleration.

Every kernel here has two interchangeable implementations: a vectorized
numpy (or scipy) fallback and a loop body compiled with ``numba.njit``.
The compiled path is used when numba imports cleanly and the environment
variable ``PROMPTCOUNT_DISABLE_NUMBA`` is unset; setting it to ``1``
(or ``true``/``yes``/``on``) forces the fallback path. Both paths are
kept importable so tests and ``benchmarks/bench_kernels.py`` can compare
them directly.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

__all__ = [
    "NUMBA_ENABLED",
    "IMPLEMENTATIONS",
    "rle_encode_counts",
    "rle_decode_flat",
    "label_components",
    "moore_trace",
    "iou_with_stack",
    "bilinear_resize",
]

_DISABLE = os.environ.get("PROMPTCOUNT_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and not _DISABLE


def _jit(func):
    # cache=True persists compiled code next to the module, so repeated
    # process starts do not pay the compile cost again.
    return numba.njit(cache=True)(func)


# ===== run-length encoding =====
# Row-major binary RLE: alternating run lengths starting with the zero run
# (possibly of length 0). Kernels operate on the raveled mask.


def _rle_encode_numpy(flat: np.ndarray) -> np.ndarray:
    n = flat.size
    if n == 0:
        return np.zeros(1, np.int64)
    starts = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], starts, [n]))
    counts = np.diff(bounds).astype(np.int64)
    if flat[0] != 0:
        counts = np.concatenate(([0], counts))
    return counts


def _rle_encode_loop(flat):
    n = flat.size
    counts = np.empty(n + 1, np.int64)
    m = 0
    cur = 0
    run = 0
    for i in range(n):
        if flat[i] == cur:
            run += 1
        else:
            counts[m] = run
            m += 1
            cur = 1 - cur
            run = 1
    counts[m] = run
    m += 1
    return counts[:m]


def _rle_decode_numpy(counts: np.ndarray, n: int) -> np.ndarray:
    vals = np.zeros(counts.size, np.uint8)
    vals[1::2] = 1
    out = np.repeat(vals, counts)
    return out[:n]


def _rle_decode_loop(counts, n):
    out = np.zeros(n, np.uint8)
    pos = 0
    val = 0
    for i in range(counts.size):
        c = counts[i]
        if val == 1:
            for j in range(pos, pos + c):
                out[j] = 1
        pos += c
        val = 1 - val
    return out


# ===== connected components =====
# Deterministic labels in raster-scan discovery order, 1..n. The compiled
# path is a two-pass union-find; the fallback leans on scipy.ndimage.label
# and then relabels to the same discovery order.

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], np.uint8)
_STRUCT_8 = np.ones((3, 3), np.uint8)


def _label_scipy(mask: np.ndarray, connectivity: int):
    structure = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    raw, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return raw.astype(np.int32), 0
    flat = raw.ravel()
    nz = flat != 0
    vals = flat[nz]
    uniq, first = np.unique(vals, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.zeros(n + 1, np.int32)
    remap[uniq[order]] = np.arange(1, n + 1, dtype=np.int32)
    return remap[raw], n


def _uf_find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _label_unionfind(mask, connectivity):
    h, w = mask.shape
    labels = np.zeros((h, w), np.int32)
    parent = np.zeros(h * w // 2 + 2, np.int32)
    nxt = 1
    conn8 = connectivity == 8
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            a = labels[y, x - 1] if x > 0 else 0
            b = labels[y - 1, x] if y > 0 else 0
            c = labels[y - 1, x - 1] if conn8 and y > 0 and x > 0 else 0
            d = labels[y - 1, x + 1] if conn8 and y > 0 and x + 1 < w else 0
            best = 0
            for v in (a, b, c, d):
                if v > 0:
                    r = _uf_find(parent, v)
                    if best == 0 or r < best:
                        best = r
            if best == 0:
                parent[nxt] = nxt
                labels[y, x] = nxt
                nxt += 1
            else:
                labels[y, x] = best
                for v in (a, b, c, d):
                    if v > 0:
                        r = _uf_find(parent, v)
                        if r != best:
                            parent[r] = best
    remap = np.zeros(nxt, np.int32)
    count = 0
    for y in range(h):
        for x in range(w):
            v = labels[y, x]
            if v == 0:
                continue
            r = _uf_find(parent, v)
            if remap[r] == 0:
                count += 1
                remap[r] = count
            labels[y, x] = remap[r]
    return labels, count


# ===== Moore-neighbor contour tracing =====
# Clockwise ring around a pixel, starting west:
#   index: 0=W 1=NW 2=N 3=NE 4=E 5=SE 6=S 7=SW


def _moore_trace_loop(mask):
    h, w = mask.shape
    dx = np.array([-1, -1, 0, 1, 1, 1, 0, -1], np.int64)
    dy = np.array([0, -1, -1, -1, 0, 1, 1, 1], np.int64)
    ring = np.zeros((3, 3), np.int64)
    for i in range(8):
        ring[dy[i] + 1, dx[i] + 1] = i

    sx = -1
    sy = -1
    for y in range(h):
        for x in range(w):
            if mask[y, x] != 0:
                sy = y
                sx = x
                break
        if sx >= 0:
            break
    if sx < 0:
        return np.empty((0, 2), np.int64)

    npix = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] != 0:
                npix += 1
    cap = 4 * npix + 8
    out = np.empty((cap, 2), np.int64)
    out[0, 0] = sx
    out[0, 1] = sy
    m = 1

    cx, cy = sx, sy
    bd = 0  # direction toward the backtrack pixel; start pixel is entered from the west
    secx = -2
    secy = -2
    terminated = False
    for _ in range(cap - 1):
        found = -1
        for k in range(1, 9):
            i = (bd + k) % 8
            ny = cy + dy[i]
            nx = cx + dx[i]
            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] != 0:
                found = i
                break
        if found < 0:
            break  # isolated pixel
        nxp = cx + dx[found]
        nyp = cy + dy[found]
        if secx == -2:
            secx = nxp
            secy = nyp
        elif cx == sx and cy == sy and nxp == secx and nyp == secy:
            # back at the start, about to repeat the opening move: closed
            terminated = True
            break
        # next backtrack = the (background) neighbor examined just before the hit
        prev = (found + 7) % 8
        px = cx + dx[prev]
        py = cy + dy[prev]
        cx = nxp
        cy = nyp
        bd = ring[py - cy + 1, px - cx + 1]
        out[m, 0] = cx
        out[m, 1] = cy
        m += 1
    if terminated and m > 1 and out[m - 1, 0] == sx and out[m - 1, 1] == sy:
        m -= 1  # drop the duplicated closure point
    return out[:m]


# ===== mask IoU against a stack =====


def _iou_stack_numpy(cand: np.ndarray, stack: np.ndarray) -> np.ndarray:
    inter = np.logical_and(stack, cand).sum(axis=(1, 2)).astype(np.float64)
    areas = stack.sum(axis=(1, 2)).astype(np.float64)
    union = areas + float(cand.sum()) - inter
    return np.where(union > 0, inter / np.maximum(union, 1.0), 0.0)


def _iou_stack_loop(cand, stack):
    k, h, w = stack.shape
    out = np.empty(k, np.float64)
    ca = 0
    for y in range(h):
        for x in range(w):
            if cand[y, x]:
                ca += 1
    for i in range(k):
        inter = 0
        sa = 0
        for y in range(h):
            for x in range(w):
                if stack[i, y, x]:
                    sa += 1
                    if cand[y, x]:
                        inter += 1
        union = ca + sa - inter
        out[i] = inter / union if union > 0 else 0.0
    return out


# ===== bilinear resize =====
# Half-pixel-center sampling (the align_corners=False convention), edges
# clamped. Used to upsample cell-resolution maps to pixel resolution.


def _bilinear_numpy(src: np.ndarray, dh: int, dw: int) -> np.ndarray:
    sh, sw = src.shape
    y = np.clip((np.arange(dh) + 0.5) * (sh / dh) - 0.5, 0.0, sh - 1.0)
    x = np.clip((np.arange(dw) + 0.5) * (sw / dw) - 0.5, 0.0, sw - 1.0)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = (y - y0)[:, None]
    fx = (x - x0)[None, :]
    v00 = src[np.ix_(y0, x0)]
    v01 = src[np.ix_(y0, x1)]
    v10 = src[np.ix_(y1, x0)]
    v11 = src[np.ix_(y1, x1)]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def _bilinear_loop(src, dh, dw):
    sh, sw = src.shape
    out = np.empty((dh, dw), np.float64)
    for j in range(dh):
        y = (j + 0.5) * (sh / dh) - 0.5
        if y < 0.0:
            y = 0.0
        if y > sh - 1.0:
            y = sh - 1.0
        y0 = int(np.floor(y))
        y1 = min(y0 + 1, sh - 1)
        fy = y - y0
        for i in range(dw):
            x = (i + 0.5) * (sw / dw) - 0.5
            if x < 0.0:
                x = 0.0
            if x > sw - 1.0:
                x = sw - 1.0
            x0 = int(np.floor(x))
            x1 = min(x0 + 1, sw - 1)
            fx = x - x0
            top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
            out[j, i] = top * (1.0 - fy) + bot * fy
    return out


# ===== dispatch =====

if NUMBA_ENABLED:
    _uf_find = _jit(_uf_find)
    _rle_encode_jit = _jit(_rle_encode_loop)
    _rle_decode_jit = _jit(_rle_decode_loop)
    _label_jit = _jit(_label_unionfind)
    _moore_jit = _jit(_moore_trace_loop)
    _iou_stack_jit = _jit(_iou_stack_loop)
    _bilinear_jit = _jit(_bilinear_loop)
else:
    _rle_encode_jit = None
    _rle_decode_jit = None
    _label_jit = None
    _moore_jit = None
    _iou_stack_jit = None
    _bilinear_jit = None


def _label_fallback(mask: np.ndarray, connectivity: int):
    return _label_scipy(mask, connectivity)


def _moore_fallback(mask: np.ndarray):
    return _moore_trace_loop(mask)


rle_encode_counts = _rle_encode_jit if NUMBA_ENABLED else _rle_encode_numpy
rle_decode_flat = _rle_decode_jit if NUMBA_ENABLED else _rle_decode_numpy
label_components = _label_jit if NUMBA_ENABLED else _label_fallback
moore_trace = _moore_jit if NUMBA_ENABLED else _moore_fallback
iou_with_stack = _iou_stack_jit if NUMBA_ENABLED else _iou_stack_numpy
bilinear_resize = _bilinear_jit if NUMBA_ENABLED else _bilinear_numpy

# Both implementations of every kernel, keyed for the benchmark and for
# dual-path tests. "fallback" is what runs with numba disabled.
IMPLEMENTATIONS = {
    "rle_encode_counts": {"fallback": _rle_encode_numpy, "numba": _rle_encode_jit},
    "rle_decode_flat": {"fallback": _rle_decode_numpy, "numba": _rle_decode_jit},
    "label_components": {"fallback": _label_fallback, "numba": _label_jit},
    "moore_trace": {"fallback": _moore_fallback, "numba": _moore_jit},
    "iou_with_stack": {"fallback": _iou_stack_numpy, "numba": _iou_stack_jit},
    "bilinear_resize": {"fallback": _bilinear_numpy, "numba": _bilinear_jit},
}
