"""Train a checkpoint on synthetic scenes and emit the bundled sample assets.

The supervision mirrors how the counting core drives a backend at
inference: single positive points and tight boxes must segment exactly the
prompted object; a semantic token pooled from a same-class object must
leave the mask intact while an off-class token must suppress it; per-cell
features must cluster by class (that is what similarity maps and semantic
vetting read); and text embeddings must land on the cells of the named
class regardless of the phrase around the name.

Run ``python3 -m model_backend.train`` to refresh the bundled tiny
checkpoint, or pass ``--out``/``--steps`` for experiments.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from promptcount.core import mask_bbox, save_image
from promptcount.synthetic import (
    SyntheticScene,
    blob_mask,
    class_map,
    exemplar_boxes,
    random_scene,
    render_scene,
)

from .model import PromptSegmenter, build_segmenter, save_checkpoint

NAME_POOL = ("gear", "blot", "disc", "cell", "dot", "bead", "seed", "spore")
TEXT_TEMPLATES = ("{}", "the photo of many {}", "a photo of a {}", "many {} on a table")
CANVAS_SIDES = (96, 128, 160, 192)

ASSETS_DIR = Path(__file__).parent / "assets"


# ===== data =====


def sample_scene(rng: np.random.Generator, side: int | None = None) -> SyntheticScene:
    names = rng.choice(len(NAME_POOL), size=2, replace=False)
    if side is None:
        side = int(rng.choice(CANVAS_SIDES))
    return random_scene(
        rng,
        width=side,
        height=side,
        n_targets=int(rng.integers(1, 6)),
        n_distractors=int(rng.integers(0, 4)),
        radius_range=(6.0, 16.0),
        noise_sigma=float(rng.uniform(0.02, 0.06)),
        class_names={NAME_POOL[names[0]]: 1, NAME_POOL[names[1]]: 2},
        name=f"scene-{int(rng.integers(2**31))}",  # unique seeded noise field
    )


def interior_point(rng: np.random.Generator, mask: np.ndarray) -> tuple[float, float, int]:
    ys, xs = np.nonzero(mask)
    i = int(rng.integers(len(ys)))
    return float(xs[i]), float(ys[i]), 1


def jittered_box(rng: np.random.Generator, mask: np.ndarray, hw: tuple[int, int]):
    box = mask_bbox(mask)
    h, w = hw
    x0 = max(0, box.x0 - int(rng.integers(0, 3)))
    y0 = max(0, box.y0 - int(rng.integers(0, 3)))
    x1 = min(w, box.x1 + int(rng.integers(0, 3)))
    y1 = min(h, box.y1 + int(rng.integers(0, 3)))
    return (float(x0), float(y0), float(x1), float(y1))


def cell_fractions(mask: np.ndarray, stride: int, grid_hw: tuple[int, int]) -> torch.Tensor:
    """Fraction of each feature cell covered by the mask."""
    gh, gw = grid_hw
    h, w = mask.shape
    padded = np.zeros((gh * stride, gw * stride), dtype=np.float32)
    padded[:h, :w] = mask
    t = torch.from_numpy(padded)
    return F.avg_pool2d(t[None, None], kernel_size=stride)[0, 0]


def pool_cells(features: torch.Tensor, fractions: torch.Tensor) -> torch.Tensor:
    """Mean feature over cells at least half covered; centroid cell fallback."""
    selected = fractions >= 0.5
    if not bool(selected.any()):
        idx = int(torch.argmax(fractions))
        flat = features.reshape(-1, features.shape[-1])
        return flat[idx]
    return features[selected].mean(dim=0)


# ===== losses =====


def mask_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    bce = F.binary_cross_entropy_with_logits(logits, target)
    if target.sum() == 0:
        return bce
    probs = torch.sigmoid(logits)
    dice = 1 - (2 * (probs * target).sum() + 1) / (probs.sum() + target.sum() + 1)
    return bce + dice


def prototype_loss(
    features: torch.Tensor, fracs: dict[int, torch.Tensor], scale: torch.Tensor
) -> torch.Tensor:
    """Cells with a clear owner must be nearest their class prototype (cosine)."""
    gh, gw, c = features.shape
    flat = F.normalize(features.reshape(-1, c), dim=-1)
    stack = torch.stack([fracs[0].reshape(-1), fracs[1].reshape(-1), fracs[2].reshape(-1)])
    owners = torch.argmax(stack, dim=0)
    clear = stack.max(dim=0).values >= 0.7
    protos = []
    for cls in range(3):
        members = clear & (owners == cls)
        if not bool(members.any()):
            return flat.sum() * 0.0  # degenerate scene; skip
        protos.append(F.normalize(flat[members].mean(dim=0), dim=-1))
    logits = scale * flat[clear] @ torch.stack(protos).T
    return F.cross_entropy(logits, owners[clear])


# ===== evaluation =====


def soft_iou(pred: np.ndarray, target: np.ndarray) -> float:
    inter = np.logical_and(pred, target).sum()
    union = np.logical_or(pred, target).sum()
    return float(inter / union) if union else 1.0


@torch.no_grad()
def evaluate(model: PromptSegmenter, seed: int = 999) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    point_iou, box_iou_, accept, reject, text_gap = [], [], [], [], []
    for _ in range(8):
        scene = sample_scene(rng)
        image = render_scene(scene)
        feats = model.encode_features(model.preprocess(image).to(model.device))[0]
        stride = model.preset.patch_size
        hw = image.shape[:2]
        classes = class_map(scene)
        for idx, blob in enumerate(scene.blobs):
            gt = blob_mask(scene, idx)
            point = interior_point(rng, gt)
            logits, _ = model.decode_logits(feats, hw, [point], None, None)
            point_iou.append(soft_iou(logits.cpu().numpy() > 0, gt))
            box = jittered_box(rng, gt, hw)
            logits, _ = model.decode_logits(feats, hw, [], box, None)
            box_iou_.append(soft_iou(logits.cpu().numpy() > 0, gt))
            same = pool_cells(feats, cell_fractions(gt, stride, feats.shape[:2]))
            logits, _ = model.decode_logits(feats, hw, [point], None, same)
            accept.append(float((logits > 0).any()))
            other = [
                j for j, b in enumerate(scene.blobs) if b.class_id != blob.class_id
            ]
            if other:
                donor = blob_mask(scene, other[0])
                off = pool_cells(feats, cell_fractions(donor, stride, feats.shape[:2]))
                logits, _ = model.decode_logits(feats, hw, [point], None, off)
                reject.append(float(not (logits > 0).any()))
        for name, cid in scene.class_names:
            sim = model.text_map(feats, name)
            on = cell_fractions(classes == cid, stride, feats.shape[:2]) >= 0.5
            if bool(on.any()) and bool((~on).any()):
                text_gap.append(float(sim[on].mean() - sim[~on].mean()))
    return {
        "point_iou": float(np.mean(point_iou)),
        "box_iou": float(np.mean(box_iou_)),
        "semantic_accept": float(np.mean(accept)),
        "semantic_reject": float(np.mean(reject)) if reject else math.nan,
        "text_gap": float(np.mean(text_gap)) if text_gap else math.nan,
    }


# ===== training loop =====


def train(args: argparse.Namespace) -> PromptSegmenter:
    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    model = build_segmenter(args.preset, seed=args.seed).to(args.device).train()
    proto_scale = torch.nn.Parameter(torch.tensor(10.0))
    text_scale = torch.nn.Parameter(torch.tensor(10.0))
    params = list(model.parameters()) + [proto_scale, text_scale]
    opt = torch.optim.Adam(params, lr=args.lr)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        opt,
        lambda step: min(1.0, (step + 1) / 100)
        * (0.5 * (1 + math.cos(math.pi * step / args.steps))),
    )
    stride = model.preset.patch_size
    start = time.perf_counter()
    for step in range(args.steps):
        side = int(rng.choice(CANVAS_SIDES))
        scenes = [sample_scene(rng, side) for _ in range(args.batch)]
        images = np.stack([render_scene(s) for s in scenes])
        batch = torch.cat([model.preprocess(im) for im in images]).to(args.device)
        feats = model.encode_features(batch)
        loss = torch.zeros((), device=args.device)
        for b, scene in enumerate(scenes):
            fb = feats[b]
            grid_hw = fb.shape[:2]
            hw = (scene.height, scene.width)
            classes = class_map(scene)
            fracs = {
                0: cell_fractions(classes == 0, stride, grid_hw).to(args.device),
                1: cell_fractions(classes == 1, stride, grid_hw).to(args.device),
                2: cell_fractions(classes == 2, stride, grid_hw).to(args.device),
            }
            loss = loss + prototype_loss(fb, fracs, proto_scale)

            idx = int(rng.integers(len(scene.blobs)))
            gt_np = blob_mask(scene, idx)
            gt = torch.from_numpy(gt_np.astype(np.float32)).to(args.device)
            points, box = [], None
            if rng.random() < 0.5:
                points = [interior_point(rng, gt_np)]
            else:
                box = jittered_box(rng, gt_np, hw)

            semantic, target, quality_target = None, gt, None
            mode = rng.random()
            if mode > 2 / 3:  # off-class token: the decode must come back empty
                donors = [
                    j
                    for j, blb in enumerate(scene.blobs)
                    if blb.class_id != scene.blobs[idx].class_id
                ]
                if donors:
                    donor = blob_mask(scene, donors[int(rng.integers(len(donors)))])
                    semantic = pool_cells(
                        fb.detach(), cell_fractions(donor, stride, grid_hw).to(args.device)
                    )
                    target = torch.zeros_like(gt)
                    quality_target = torch.zeros((), device=args.device)
            elif mode > 1 / 3:  # same-class token keeps the mask
                donors = [
                    j
                    for j, blb in enumerate(scene.blobs)
                    if blb.class_id == scene.blobs[idx].class_id
                ] or [idx]
                donor = blob_mask(scene, donors[int(rng.integers(len(donors)))])
                semantic = pool_cells(
                    fb.detach(), cell_fractions(donor, stride, grid_hw).to(args.device)
                )

            logits, quality = model.decode_logits(fb, hw, points, box, semantic)
            loss = loss + mask_loss(logits, target)
            if quality_target is None:
                quality_target = torch.tensor(
                    soft_iou(logits.detach().cpu().numpy() > 0, target.cpu().numpy() > 0),
                    device=args.device,
                )
            loss = loss + F.mse_loss(quality, quality_target)

            for name, cid in scene.class_names:
                phrase = TEXT_TEMPLATES[int(rng.integers(len(TEXT_TEMPLATES)))].format(name)
                sim = model.text_map(fb, phrase)
                on = (fracs[cid] >= 0.5).float()
                loss = loss + F.binary_cross_entropy_with_logits(text_scale * sim, on)

        loss = loss / args.batch
        opt.zero_grad()
        loss.backward()
        opt.step()
        schedule.step()
        if (step + 1) % args.log_every == 0:
            print(
                f"step {step + 1:5d}/{args.steps}  loss {loss.item():.4f}  "
                f"lr {schedule.get_last_lr()[0]:.2e}  "
                f"{time.perf_counter() - start:.0f}s",
                flush=True,
            )
        if (step + 1) % args.eval_every == 0 or step + 1 == args.steps:
            model.eval()
            print(f"  eval: {json.dumps(evaluate(model))}", flush=True)
            model.train()
    return model.eval()


# ===== bundled demo assets =====


def write_sample_assets(directory: Path) -> None:
    """A fixed demo scene plus prompts, for smoke tests and the README."""
    rng = np.random.default_rng(20260814)
    scene = random_scene(
        rng,
        width=192,
        height=160,
        n_targets=4,
        n_distractors=2,
        radius_range=(9.0, 14.0),
        noise_sigma=0.04,
        class_names={"gear": 1, "blot": 2},
        name="bundled-sample",
    )
    image = render_scene(scene)
    box = exemplar_boxes(scene, 1, k=1)[0]
    first = scene.blobs[0]
    sample = {
        "scene": scene.to_dict(),
        "object_point": [first.cx, first.cy],
        "object_box": list(box.as_tuple()),
        "text": "gear",
        "target_count": scene.count_of_class(1),
    }
    directory.mkdir(parents=True, exist_ok=True)
    save_image(str(directory / "sample.png"), image)
    with open(directory / "sample.json", "w") as f:
        json.dump(sample, f, indent=1)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="model_backend.train", description=__doc__.splitlines()[0]
    )
    parser.add_argument("--preset", default="tiny")
    parser.add_argument("--steps", type=int, default=2500)
    parser.add_argument("--batch", type=int, default=6)
    parser.add_argument("--lr", type=float, default=3e-4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--log-every", type=int, default=100)
    parser.add_argument("--eval-every", type=int, default=500)
    parser.add_argument("--out", default=str(ASSETS_DIR / "tiny.pt"))
    parser.add_argument(
        "--skip-assets", action="store_true", help="do not rewrite sample.png/sample.json"
    )
    args = parser.parse_args(argv)
    model = train(args)
    save_checkpoint(model, args.out, trained_steps=args.steps, seed=args.seed)
    print(f"checkpoint written to {args.out}")
    if not args.skip_assets:
        write_sample_assets(Path(args.out).parent)
        print(f"sample assets written next to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
