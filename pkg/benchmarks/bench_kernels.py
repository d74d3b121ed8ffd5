"""Benchmark the numba kernels against their numpy/scipy fallbacks.

Each kernel in ``promptcount.kernels.IMPLEMENTATIONS`` is run on a
pipeline-shaped workload with both implementations; the compiled path is
warmed first so JIT compilation never lands inside a timed repeat. Outputs
are also cross-checked so a speedup never hides a divergence.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N]

With PROMPTCOUNT_DISABLE_NUMBA=1 the compiled column is skipped (only the
fallback is timed), which is useful for sanity runs on machines without a
working numba toolchain.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from promptcount.kernels import IMPLEMENTATIONS, NUMBA_ENABLED


def blob_field(h: int, w: int, n_blobs: int, seed: int) -> np.ndarray:
    """A mask resembling a counting scene: scattered filled ellipses."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(n_blobs):
        cx, cy = rng.uniform(20, w - 20), rng.uniform(20, h - 20)
        rx, ry = rng.uniform(8, 16), rng.uniform(8, 16)
        mask |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return mask


def single_blob(h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ((xx - w / 2) / (w * 0.3)) ** 2 + ((yy - h / 2) / (h * 0.3)) ** 2 <= 1.0


def build_workloads() -> dict[str, tuple]:
    """Kernel name -> positional argument tuple, sized like real pipeline use."""
    h = w = 352
    scene = blob_field(h, w, 24, seed=3)
    flat = scene.ravel().astype(np.uint8)
    counts = IMPLEMENTATIONS["rle_encode_counts"]["fallback"](flat)
    stack = np.stack([blob_field(h, w, 1, seed=s) for s in range(16)])
    coarse = np.random.default_rng(5).random((44, 44))
    return {
        "rle_encode_counts": (flat,),
        "rle_decode_flat": (np.asarray(counts, dtype=np.int64), flat.size),
        "label_components": (scene.astype(np.uint8), 8),
        "moore_trace": (single_blob(h, w).astype(np.uint8),),
        "iou_with_stack": (scene, stack),
        "bilinear_resize": (coarse, h, w),
    }


def normalize(value):
    """Make kernel outputs comparable across implementations."""
    if isinstance(value, tuple):
        return tuple(normalize(v) for v in value)
    if isinstance(value, np.ndarray):
        return np.asarray(value)
    return value


def outputs_match(a, b) -> bool:
    a, b = normalize(a), normalize(b)
    if isinstance(a, tuple):
        return len(a) == len(b) and all(outputs_match(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        if np.issubdtype(a.dtype, np.floating):
            return np.allclose(a, b, rtol=0, atol=1e-12)
        return np.array_equal(a, b)
    return a == b


def time_call(func, args, repeats: int) -> float:
    """Median wall time in seconds over `repeats` calls (after one warm-up)."""
    func(*args)  # warm-up: JIT compile / cache touch
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        func(*args)
        samples.append(time.perf_counter() - start)
    return float(np.median(samples))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30,
                        help="timed repeats per implementation (default 30)")
    args = parser.parse_args()

    workloads = build_workloads()
    name_w = max(len(n) for n in workloads)
    if NUMBA_ENABLED:
        print(f"{'kernel':<{name_w}}  {'fallback':>12}  {'numba':>12}  {'speedup':>8}")
    else:
        print(f"{'kernel':<{name_w}}  {'fallback':>12}   (numba disabled)")

    for name, call_args in workloads.items():
        impls = IMPLEMENTATIONS[name]
        fallback_s = time_call(impls["fallback"], call_args, args.repeats)
        if not NUMBA_ENABLED:
            print(f"{name:<{name_w}}  {fallback_s * 1e3:>10.3f}ms")
            continue
        if not outputs_match(
            impls["fallback"](*call_args), impls["numba"](*call_args)
        ):
            raise SystemExit(f"{name}: implementations disagree")
        numba_s = time_call(impls["numba"], call_args, args.repeats)
        print(
            f"{name:<{name_w}}  {fallback_s * 1e3:>10.3f}ms  "
            f"{numba_s * 1e3:>10.3f}ms  {fallback_s / numba_s:>7.2f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
