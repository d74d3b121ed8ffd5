"""Acceptance suite: one test per shipping criterion.

Each test prints a single ``[PASS] criterion: detail`` line on success;
under ``pytest -v`` every criterion also gets its own PASSED/FAILED row.
Oracles here are written independently of the library (plain Python and
Fractions) so agreement is evidence, not tautology.
"""

import itertools
import json
import math
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from promptcount.backend import DecodeRequest
from promptcount.core import Box, PromptSet, box_iou, mask_iou, rle_decode, rle_encode
from promptcount.errors import NoReferenceError
from promptcount.evalbench import counting_metrics
from promptcount.imageops import nms, otsu_threshold
from promptcount.pipelines import (
    PipelineConfig,
    auto_grid_size,
    prior_guided_count,
    text_count,
    vanilla_count,
)
from promptcount.synthetic import (
    Blob,
    SyntheticBackend,
    SyntheticScene,
    exemplar_boxes,
    random_scene,
    render_scene,
)

GEAR, BLOT = 1, 2


def canvas_side(n_blobs: int) -> int:
    """Side length giving rejection sampling comfortable headroom."""
    return max(256, int(math.ceil(math.sqrt(n_blobs * 4000.0))))


def scene_count(scene, cfg=None, pipeline="prior"):
    """Count with one exemplar box on a fresh oracle backend."""
    backend = SyntheticBackend(scene)
    image = render_scene(scene)
    prompts = PromptSet(boxes=(exemplar_boxes(scene, GEAR, k=1)[0],))
    cfg = cfg or PipelineConfig()
    if pipeline == "prior":
        return prior_guided_count(backend, image, prompts, cfg)
    if pipeline == "unfiltered":
        cfg = replace(cfg, score_filter=False)
    return vanilla_count(backend, image, prompts, cfg)


def mae(gts, preds) -> float:
    return sum(abs(g - p) for g, p in zip(gts, preds)) / len(gts)


def test_counts_match_ground_truth_on_200_random_scenes():
    rng = np.random.default_rng(2026)
    started = time.perf_counter()
    exact = 0
    total = 200
    for i in range(total):
        n_targets = int(rng.integers(1, 51))
        n_distractors = int(rng.integers(0, 21))
        side = canvas_side(n_targets + n_distractors)
        scene = random_scene(
            rng,
            width=side,
            height=side,
            n_targets=n_targets,
            n_distractors=n_distractors,
            radius_range=(9.0, 14.0),
            noise_sigma=0.05,
            name=f"acc-exact-{i}",
        )
        if scene_count(scene).count == n_targets:
            exact += 1
    elapsed = time.perf_counter() - started
    assert exact >= 0.95 * total, f"only {exact}/{total} scenes counted exactly"
    assert elapsed < 60.0, f"suite took {elapsed:.1f}s"
    print(f"[PASS] end-to-end exactness: {exact}/{total} exact in {elapsed:.1f}s")


def brute_force_otsu(counts: list[int]) -> int:
    """Textbook between-class-variance argmax in exact arithmetic."""
    occupied = [i for i, c in enumerate(counts) if c > 0]
    if len(occupied) == 1:
        return occupied[0]
    total = sum(counts)
    moment = sum(i * c for i, c in enumerate(counts))
    best_t, best_var = 0, Fraction(-1)
    w0 = m0 = 0
    for t in range(256):
        w0 += counts[t]
        m0 += t * counts[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        mu0 = Fraction(m0, w0)
        mu1 = Fraction(moment - m0, w1)
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var:
            best_var, best_t = var, t
    return best_t


def test_otsu_threshold_matches_brute_force_on_1000_histograms():
    rng = np.random.default_rng(7)
    agree = 0
    total = 1000
    for i in range(total):
        kind = i % 4
        hist = np.zeros(256, dtype=np.int64)
        if kind == 0:  # dense uniform counts, many near-ties
            hist[:] = rng.integers(0, 4, size=256)
        elif kind == 1:  # two quantized bumps
            for center, spread, mass in ((64, 12, 400), (180, 18, 600)):
                samples = np.clip(
                    rng.normal(center, spread, size=mass).round(), 0, 255
                ).astype(np.int64)
                hist += np.bincount(samples, minlength=256)
        elif kind == 2:  # sparse support
            bins = rng.choice(256, size=int(rng.integers(2, 11)), replace=False)
            hist[bins] = rng.integers(1, 1000, size=bins.shape)
        else:  # single occupied bin
            hist[int(rng.integers(0, 256))] = int(rng.integers(1, 100))
        if hist.sum() == 0:
            hist[0] = 1
        if otsu_threshold(hist) == brute_force_otsu([int(c) for c in hist]):
            agree += 1
    assert agree == total, f"{total - agree} histograms disagreed"
    print(f"[PASS] otsu brute-force agreement: {agree}/{total}")


def metrics_oracle(y: list[float], p: list[float]) -> tuple[float, float, float, float]:
    n = len(y)
    mae_ = sum(abs(a - b) for a, b in zip(y, p)) / n
    rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(y, p)) / n)
    pos = [i for i in range(n) if y[i] > 0]
    nae = sum(abs(y[i] - p[i]) / y[i] for i in pos) / len(pos)
    sre = math.sqrt(sum((y[i] - p[i]) ** 2 / y[i] for i in pos) / len(pos))
    return mae_, rmse, nae, sre


def test_metrics_match_formula_oracle():
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        y = rng.integers(0, 61, size=n).astype(float)
        if not (y > 0).any():
            y[int(rng.integers(0, n))] = float(rng.integers(1, 61))
        p = rng.integers(0, 61, size=n).astype(float)
        m = counting_metrics(y, p)
        for got, want in zip((m.mae, m.rmse, m.nae, m.sre), metrics_oracle(list(y), list(p))):
            assert abs(got - want) <= 1e-9, f"{got} vs {want} on y={y}, p={p}"
        checked += 1

    hand = counting_metrics([2, 4], [3, 2])
    expected = (1.5, 1.58114, 0.5, 0.86603)
    for got, want in zip((hand.mae, hand.rmse, hand.nae, hand.sre), expected):
        assert abs(got - want) <= 1e-5, f"hand case: {got} vs {want}"
    print(f"[PASS] metric exactness: {checked} random vectors at 1e-9, hand case at 1e-5")


@pytest.fixture(scope="module")
def ordering_suite():
    rng = np.random.default_rng(41)
    scenes = []
    for i in range(20):
        n_targets = int(rng.integers(2, 9))
        n_distractors = int(rng.integers(1, 6))
        side = canvas_side(n_targets + n_distractors)
        scenes.append(
            random_scene(
                rng,
                width=side,
                height=side,
                n_targets=n_targets,
                n_distractors=n_distractors,
                radius_range=(9.0, 14.0),
                name=f"acc-order-{i}",
            )
        )
    return scenes


def test_pipeline_ordering_on_twenty_scene_manifest(ordering_suite):
    gts = [sum(b.class_id == GEAR for b in s.blobs) for s in ordering_suite]
    maes = {
        pipeline: mae(gts, [scene_count(s, pipeline=pipeline).count
                            for s in ordering_suite])
        for pipeline in ("prior", "vanilla", "unfiltered")
    }
    assert maes["prior"] <= maes["vanilla"] <= maes["unfiltered"]
    assert maes["prior"] < maes["unfiltered"]
    print(
        "[PASS] pipeline ordering: "
        f"MAE prior={maes['prior']:.3f} <= vanilla={maes['vanilla']:.3f} "
        f"<= unfiltered={maes['unfiltered']:.3f}, outer strict"
    )


def test_each_prior_reduces_error_and_all_three_minimize_it():
    rng = np.random.default_rng(53)
    scenes = [
        random_scene(
            rng,
            width=352,
            height=352,
            n_targets=int(rng.integers(5, 8)),
            n_distractors=int(rng.integers(3, 6)),
            n_embedded=int(rng.integers(2, 4)),
            radius_range=(9.0, 14.0),
            host_radius_range=(14.0, 18.0),
            name=f"acc-ablate-{i}",
        )
        for i in range(6)
    ]
    gts = [sum(b.class_id == GEAR for b in s.blobs) for s in scenes]

    maes = {}
    for combo in itertools.product((False, True), repeat=3):
        sim, seg, sem = combo
        cfg = PipelineConfig(
            use_similarity_prior=sim,
            use_segment_prior=seg,
            use_semantic_prior=sem,
        )
        preds = [scene_count(s, cfg=cfg).count for s in scenes]
        maes[combo] = mae(gts, preds)

    baseline = maes[(False, False, False)]
    singles = {
        "similarity": maes[(True, False, False)],
        "segment": maes[(False, True, False)],
        "semantic": maes[(False, False, True)],
    }
    for name, value in singles.items():
        assert value < baseline, f"{name} prior alone did not reduce MAE"
    all_three = maes[(True, True, True)]
    assert all_three == min(maes.values())
    print(
        "[PASS] prior ablations: baseline MAE "
        f"{baseline:.3f}; singles {{"
        + ", ".join(f"{k}={v:.3f}" for k, v in singles.items())
        + f"}}; all three {all_three:.3f} == minimum of 8 combos"
    )


def test_segment_prior_cuts_decoder_calls_on_dense_scenes():
    rng = np.random.default_rng(67)
    ratios = []
    for i, n_targets in enumerate((30, 35, 40)):
        side = canvas_side(n_targets)
        scene = random_scene(
            rng,
            width=side,
            height=side,
            n_targets=n_targets,
            radius_range=(9.0, 14.0),
            name=f"acc-dense-{i}",
        )
        prior_calls = scene_count(scene).stats.decoder_calls
        vanilla_calls = scene_count(scene, pipeline="vanilla").stats.decoder_calls
        ratios.append(prior_calls / vanilla_calls)
        assert prior_calls <= 0.7 * vanilla_calls, (
            f"{n_targets} blobs: {prior_calls} vs {vanilla_calls} decoder calls"
        )
    print(
        "[PASS] decoder-call efficiency: prior/vanilla ratios "
        + ", ".join(f"{r:.3f}" for r in ratios)
        + " all <= 0.7"
    )


def test_identical_runs_are_byte_identical_and_batch_invariant():
    rng = np.random.default_rng(73)
    scene = random_scene(
        rng,
        n_targets=9,
        n_distractors=4,
        radius_range=(9.0, 14.0),
        width=320,
        height=320,
        name="acc-determinism",
    )
    first = scene_count(scene)
    second = scene_count(scene)
    assert first.to_json(with_timing=False) == second.to_json(with_timing=False)

    counts = {}
    mask_sets = {}
    for batch in (16, 64, 256):
        result = scene_count(scene, cfg=PipelineConfig(points_per_batch=batch))
        counts[batch] = result.count
        mask_sets[batch] = {
            json.dumps(rle_encode(m.mask).to_dict(), sort_keys=True)
            for m in result.masks
        }
    assert len(set(counts.values())) == 1, f"counts varied: {counts}"
    assert len({frozenset(s) for s in mask_sets.values()}) == 1
    print(
        "[PASS] determinism: byte-identical reruns; "
        f"count {first.count} invariant for batch sizes 16/64/256"
    )


def brute_force_nms(boxes, scores, threshold):
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(box_iou(boxes[i], boxes[j]) <= threshold for j in kept):
            kept.append(i)
    return kept


def random_mask(rng, h=24, w=32):
    kind = int(rng.integers(0, 4))
    if kind == 0:
        return np.zeros((h, w), dtype=bool)
    if kind == 1:
        return np.ones((h, w), dtype=bool)
    if kind == 2:
        return rng.random((h, w)) < float(rng.uniform(0.05, 0.6))
    yy, xx = np.mgrid[0:h, 0:w]
    cx, cy = rng.uniform(0, w), rng.uniform(0, h)
    r = rng.uniform(1, 10)
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def test_mask_suppression_properties_hold():
    rng = np.random.default_rng(83)

    for _ in range(200):  # greedy suppression equals the brute-force oracle
        k = int(rng.integers(0, 9))
        boxes = []
        for _ in range(k):
            x0, y0 = int(rng.integers(0, 40)), int(rng.integers(0, 40))
            boxes.append(
                Box(x0, y0, x0 + int(rng.integers(1, 24)), y0 + int(rng.integers(1, 24)))
            )
        scores = np.round(rng.random(k), 1)  # coarse scores force ties
        threshold = float(rng.choice([0.0, 0.3, 0.5, 0.7]))
        assert nms(boxes, scores, threshold) == brute_force_nms(boxes, scores, threshold)

    for _ in range(200):  # run-length codec round-trips every mask
        mask = random_mask(rng)
        assert np.array_equal(rle_decode(rle_encode(mask)), mask)

    for _ in range(200):  # overlap algebra
        a, b = random_mask(rng), random_mask(rng)
        iou = mask_iou(a, b)
        assert 0.0 <= iou <= 1.0
        assert iou == mask_iou(b, a)
        if a.any():
            assert mask_iou(a, a) == 1.0
        if not (a & b).any():
            assert iou == 0.0

    scene = random_scene(
        np.random.default_rng(89),
        n_targets=10,
        n_distractors=4,
        width=320,
        height=320,
        radius_range=(9.0, 14.0),
        name="acc-properties",
    )
    for pipeline in ("prior", "vanilla"):
        result = scene_count(scene, pipeline=pipeline)
        assert result.count == len(result.masks)
        masks = [m.mask for m in result.masks]
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                assert mask_iou(masks[i], masks[j]) <= 0.7
    print(
        "[PASS] suppression properties: NMS==oracle, RLE round-trip, IoU algebra "
        "(200 cases each); final masks pairwise IoU <= 0.7 and count == len(masks)"
    )


def test_auto_grid_size_worked_cases():
    cases = {64: 32, 16: 96, 8: 128}
    for o_size, expected in cases.items():
        assert auto_grid_size(o_size) == expected
    print("[PASS] grid formula: 64->32, 16->96, 8->128")


def adjacent_distractor_scene(rng, name: str) -> tuple:
    """Targets on a jittered lattice; some get an off-class blob parked just
    below them.

    The adjacent blob is the discriminating case: the coarse text map's halo
    swallows it, but it lies outside every target mask, so only the reference
    selection stage (via its semantic vetting) can avoid counting it. The
    first target is made strictly larger than the rest and never receives an
    attachment, so the selection stage (which reads the largest coarse
    region) always builds its references from a clean target.
    """
    slots = [(60 + 116 * col, 70 + 170 * row) for row in range(2) for col in range(3)]
    order = rng.permutation(len(slots))
    n_targets = int(rng.integers(2, 6))
    n_attached = int(rng.integers(1, n_targets))
    n_free = min(int(rng.integers(0, 2)), len(slots) - n_targets)
    blobs = []
    for j in range(n_targets):
        sx, sy = slots[order[j]]
        cx = sx + float(rng.uniform(-10, 10))
        cy = sy + float(rng.uniform(-8, 8))
        if j == 0:  # the clean, selection-dominating target
            rx, ry = float(rng.uniform(24.5, 26)), float(rng.uniform(24.5, 26))
        elif j <= n_attached:
            rx, ry = float(rng.uniform(20, 21.5)), float(rng.uniform(20, 21.5))
        else:
            rx, ry = float(rng.uniform(20, 24)), float(rng.uniform(20, 24))
        blobs.append(Blob(cx, cy, rx, ry, GEAR))
        if 1 <= j <= n_attached:
            rb = float(rng.uniform(10, 12))
            blobs.append(Blob(cx, cy + ry + 3.0 + rb, rb, rb, BLOT))
    for j in range(n_targets, n_targets + n_free):
        sx, sy = slots[order[j]]
        blobs.append(Blob(float(sx), float(sy), 10.0, 10.0, BLOT))
    scene = SyntheticScene(
        width=352,
        height=352,
        blobs=tuple(blobs),
        class_names=(("blot", BLOT), ("gear", GEAR)),
        noise_sigma=0.05,
        text_halo=1,
        name=name,
    )
    return scene, n_targets


def test_text_prompts_agree_with_box_prompts():
    rng = np.random.default_rng(2027)
    total = 100
    agree = 0
    gts, selected_preds, direct_preds = [], [], []
    for i in range(total):
        scene, n_targets = adjacent_distractor_scene(rng, f"acc-text-{i}")
        backend = SyntheticBackend(scene)
        image = render_scene(scene)
        box_result = prior_guided_count(
            backend, image, PromptSet(boxes=(exemplar_boxes(scene, GEAR, k=1)[0],)),
            PipelineConfig(),
        )
        try:
            selected_count = text_count(
                backend, image, "the photo of many gear"
            ).count
        except NoReferenceError:
            selected_count = 0  # a failed selection is a miss, not a crash
        direct = text_count(
            backend, image, "the photo of many gear",
            PipelineConfig(use_reference_selection=False),
        )
        agree += selected_count == box_result.count
        gts.append(n_targets)
        selected_preds.append(selected_count)
        direct_preds.append(direct.count)

    selected_mae = mae(gts, selected_preds)
    direct_mae = mae(gts, direct_preds)
    assert agree >= 0.95 * total, f"text agreed with boxes on only {agree}/{total}"
    assert selected_mae < direct_mae, (
        f"reference selection did not help: {selected_mae} vs {direct_mae}"
    )
    print(
        f"[PASS] text pipeline: {agree}/{total} scenes match box counts; "
        f"MAE {selected_mae:.3f} with selection < {direct_mae:.3f} without"
    )
