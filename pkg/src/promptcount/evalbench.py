"""Counting metrics, dataset manifests, and the batch benchmark driver.

A manifest is a normalized JSON schema (image path, class name, exemplar
boxes, ground-truth count per entry); converters from public dataset
annotation formats belong in scripts, not here. The driver runs one of
the counting pipelines over every entry and aggregates the four standard
counting metrics; per-entry failures are recorded and excluded from the
aggregates rather than aborting the run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backend import Backend
from .core import Box, PromptPoint, PromptSet, load_image, save_image
from .errors import PromptCountError
from .pipelines import PipelineConfig, prior_guided_count, text_count, vanilla_count
from .synthetic import SyntheticScene, exemplar_boxes, render_scene

logger = logging.getLogger(__name__)

TEXT_TEMPLATE = "the photo of many {}"

PIPELINES = ("prior", "vanilla", "unfiltered")
PROMPT_TYPES = ("box", "point", "text")


# ===== metrics =====


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    nae: float  # NaN when no entry had a positive ground truth
    sre: float  # NaN when no entry had a positive ground truth
    n: int
    n_excluded_relative: int  # entries left out of NAE/SRE only

    def to_dict(self) -> dict:
        return {
            "MAE": self.mae,
            "RMSE": self.rmse,
            "NAE": self.nae,
            "SRE": self.sre,
            "n": self.n,
            "n_excluded_relative": self.n_excluded_relative,
        }


def counting_metrics(y_true, y_pred) -> Metrics:
    """MAE/RMSE over all entries; NAE/SRE over entries with positive truth.

    MAE  = 1/n sum |y - yhat|
    RMSE = sqrt(1/n sum (y - yhat)^2)
    NAE  = 1/n sum |y - yhat| / y
    SRE  = sqrt(1/n sum (y - yhat)^2 / y)
    """
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError(f"need equal-length 1D inputs, got {y.shape} and {p.shape}")
    if y.size == 0:
        raise ValueError("metrics are undefined for empty inputs")
    err = y - p
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err**2)))
    positive = y > 0
    excluded = int(np.count_nonzero(~positive))
    if excluded:
        logger.warning(
            "%d of %d entries have non-positive ground truth; "
            "excluded from NAE/SRE",
            excluded,
            y.size,
        )
    if positive.any():
        nae = float(np.mean(np.abs(err[positive]) / y[positive]))
        sre = float(math.sqrt(np.mean(err[positive] ** 2 / y[positive])))
    else:
        nae = float("nan")
        sre = float("nan")
    return Metrics(
        mae=mae, rmse=rmse, nae=nae, sre=sre, n=int(y.size),
        n_excluded_relative=excluded,
    )


# ===== manifests =====


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str  # absolute after load_manifest
    class_name: str
    exemplar_boxes: tuple[Box, ...]
    gt_count: int

    def __post_init__(self):
        if self.gt_count < 0:
            raise ValueError(f"gt_count must be >= 0, got {self.gt_count}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("manifest has no entries")


def load_manifest(path: str) -> DatasetManifest:
    """Read a manifest; image paths resolve relative to the manifest file."""
    base = Path(path).resolve().parent
    with open(path) as f:
        data = json.load(f)
    entries = []
    for i, e in enumerate(data["entries"]):
        image = Path(e["image"])
        if not image.is_absolute():
            image = base / image
        entries.append(
            ManifestEntry(
                id=str(e.get("id", image.stem)),
                image_path=str(image),
                class_name=str(e["class_name"]),
                exemplar_boxes=tuple(
                    Box(int(b[0]), int(b[1]), int(b[2]), int(b[3]))
                    for b in e.get("exemplar_boxes", [])
                ),
                gt_count=int(e["gt_count"]),
            )
        )
    return DatasetManifest(entries=tuple(entries))


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write a manifest; image paths are stored relative to it when possible."""
    base = Path(path).resolve().parent
    entries = []
    for e in manifest.entries:
        image = Path(e.image_path).resolve()
        try:
            image = image.relative_to(base)
        except ValueError:
            pass
        entries.append(
            {
                "id": e.id,
                "image": str(image),
                "class_name": e.class_name,
                "exemplar_boxes": [list(b.as_tuple()) for b in e.exemplar_boxes],
                "gt_count": e.gt_count,
            }
        )
    with open(path, "w") as f:
        json.dump({"entries": entries}, f, indent=1)


def materialize_scene_dataset(
    scenes: list[SyntheticScene],
    directory: str,
    class_id: int = 1,
    exemplars: int = 1,
) -> str:
    """Render scenes to PNGs and write the matching manifest; returns its path.

    The ground truth is the scene's own blob count for the class; exemplar
    boxes are tight boxes around the first blobs of that class.
    """
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, scene in enumerate(scenes):
        names = {v: k for k, v in scene.class_names}
        if class_id not in names:
            raise ValueError(f"scene {i} has no name registered for class {class_id}")
        entry_id = scene.name or f"scene-{i:03d}"
        rel = f"images/{entry_id}.png"
        save_image(str(root / rel), render_scene(scene))
        entries.append(
            ManifestEntry(
                id=entry_id,
                image_path=str((root / rel).resolve()),
                class_name=names[class_id],
                exemplar_boxes=tuple(exemplar_boxes(scene, class_id, exemplars)),
                gt_count=scene.count_of_class(class_id),
            )
        )
    manifest_path = str(root / "manifest.json")
    save_manifest(DatasetManifest(entries=tuple(entries)), manifest_path)
    return manifest_path


# ===== benchmark driver =====


@dataclass
class EvalRow:
    id: str
    gt: int
    pred: int | None
    abs_err: float | None
    error: str | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow]
    metrics: Metrics | None  # None when every entry failed
    prompt_type: str
    pipeline: str
    n_failed: int
    wall_time: float
    config: dict = field(default_factory=dict)

    def aggregates(self) -> dict:
        out = {
            "prompt_type": self.prompt_type,
            "pipeline": self.pipeline,
            "n_failed": self.n_failed,
            "wall_time": self.wall_time,
            "config": self.config,
        }
        out.update(self.metrics.to_dict() if self.metrics else {"n": 0})
        return out


def _resolve_pipeline(pipeline: str, cfg: PipelineConfig):
    if pipeline == "prior":
        return prior_guided_count, cfg
    if pipeline == "vanilla":
        return vanilla_count, cfg
    if pipeline == "unfiltered":
        return vanilla_count, replace(cfg, score_filter=False)
    raise ValueError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")


def _evaluate_entry(
    backend: Backend, entry: ManifestEntry, cfg: PipelineConfig,
    prompt_type: str, pipeline: str,
) -> EvalRow:
    try:
        image = load_image(entry.image_path)
        if prompt_type == "text":
            mode = "prior" if pipeline == "prior" else "vanilla"
            _, run_cfg = _resolve_pipeline(pipeline, cfg)
            result = text_count(
                backend, image, TEXT_TEMPLATE.format(entry.class_name),
                run_cfg, mode=mode,
            )
        else:
            if prompt_type == "box":
                prompts = PromptSet(boxes=entry.exemplar_boxes)
            elif prompt_type == "point":
                prompts = PromptSet(
                    points=tuple(
                        PromptPoint((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0, 1)
                        for b in entry.exemplar_boxes
                    )
                )
            else:
                raise ValueError(
                    f"unknown prompt_type {prompt_type!r}; expected one of {PROMPT_TYPES}"
                )
            run, run_cfg = _resolve_pipeline(pipeline, cfg)
            result = run(backend, image, prompts, run_cfg)
        return EvalRow(
            id=entry.id,
            gt=entry.gt_count,
            pred=result.count,
            abs_err=float(abs(entry.gt_count - result.count)),
        )
    except (PromptCountError, OSError) as exc:
        logger.warning("entry %s failed: %s", entry.id, exc)
        return EvalRow(
            id=entry.id, gt=entry.gt_count, pred=None, abs_err=None, error=str(exc)
        )


def run_benchmark(
    backend: Backend,
    manifest: DatasetManifest,
    cfg: PipelineConfig | None = None,
    prompt_type: str = "box",
    pipeline: str = "prior",
    workers: int = 1,
    report_dir: str | None = None,
) -> EvalReport:
    """Evaluate every manifest entry; optionally write the report files.

    Entries may be evaluated concurrently (``workers`` > 1); rows keep
    manifest order either way. Failed entries carry an error message and
    are excluded from the aggregate metrics.
    """
    cfg = cfg or PipelineConfig()
    if prompt_type not in PROMPT_TYPES:
        raise ValueError(
            f"unknown prompt_type {prompt_type!r}; expected one of {PROMPT_TYPES}"
        )
    _resolve_pipeline(pipeline, cfg)  # validate early
    start = time.perf_counter()

    def job(entry: ManifestEntry) -> EvalRow:
        return _evaluate_entry(backend, entry, cfg, prompt_type, pipeline)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, manifest.entries))
    else:
        rows = [job(e) for e in manifest.entries]

    ok = [r for r in rows if r.error is None]
    metrics = (
        counting_metrics([r.gt for r in ok], [r.pred for r in ok]) if ok else None
    )
    report = EvalReport(
        rows=rows,
        metrics=metrics,
        prompt_type=prompt_type,
        pipeline=pipeline,
        n_failed=len(rows) - len(ok),
        wall_time=time.perf_counter() - start,
        config=vars(cfg).copy(),
    )
    if report_dir is not None:
        write_report(report, report_dir)
    return report


def write_report(report: EvalReport, directory: str) -> tuple[str, str]:
    """Write rows as CSV and aggregates as JSON; returns both paths."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    csv_path = root / "report.csv"
    json_path = root / "aggregates.json"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "gt", "pred", "abs_err"])
        for r in report.rows:
            writer.writerow(
                [
                    r.id,
                    r.gt,
                    "" if r.pred is None else r.pred,
                    "" if r.abs_err is None else r.abs_err,
                ]
            )
    failures = {r.id: r.error for r in report.rows if r.error is not None}
    payload = report.aggregates()
    if failures:
        payload["failures"] = failures
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    return str(csv_path), str(json_path)
