"""Command-line interface: count one image, benchmark a manifest, serve the UI.

Backend selection uses one spec string: ``synthetic:<scenes.json>`` for
the oracle backend or ``http(s)://host:port`` for a wire-protocol server;
the ``PROMPTCOUNT_BACKEND`` environment variable supplies the default.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 backend
unreachable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .core import Box, PromptPoint, PromptSet, load_image, save_image
from .errors import BackendUnreachableError, PromptCountError
from .evalbench import load_manifest, run_benchmark
from .pipelines import PipelineConfig, prior_guided_count, text_count, vanilla_count
from .synthetic import SyntheticBackend, load_scenes
from .viz import overlay_count
from .wire import HttpBackend

ENV_BACKEND = "PROMPTCOUNT_BACKEND"
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_UNREACHABLE = 3


def _parse_point(text: str) -> PromptPoint:
    parts = text.split(",")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(
            f"point must be X,Y or X,Y,LABEL, got {text!r}"
        )
    try:
        x, y = float(parts[0]), float(parts[1])
        label = int(parts[2]) if len(parts) == 3 else 1
        return PromptPoint(x, y, label)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _parse_box(text: str) -> Box:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"box must be X0,Y0,X1,Y1, got {text!r}")
    try:
        return Box(*(int(p) for p in parts))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epsilon", type=float, default=None,
                        help="similarity score threshold (vanilla filter)")
    parser.add_argument("--points-per-side", type=int, default=None,
                        help="grid side; default 32 (vanilla) or auto (prior)")
    parser.add_argument("--points-per-batch", type=int, default=None)
    parser.add_argument("--no-similarity-prior", action="store_true")
    parser.add_argument("--no-segment-prior", action="store_true")
    parser.add_argument("--no-semantic-prior", action="store_true")
    parser.add_argument("--no-reference-selection", action="store_true",
                        help="text mode: use the raw coarse map directly")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    kwargs = {}
    if args.epsilon is not None:
        kwargs["epsilon"] = args.epsilon
    if args.points_per_side is not None:
        kwargs["points_per_side"] = args.points_per_side
    if args.points_per_batch is not None:
        kwargs["points_per_batch"] = args.points_per_batch
    if args.no_similarity_prior:
        kwargs["use_similarity_prior"] = False
    if args.no_segment_prior:
        kwargs["use_segment_prior"] = False
    if args.no_semantic_prior:
        kwargs["use_semantic_prior"] = False
    if args.no_reference_selection:
        kwargs["use_reference_selection"] = False
    return PipelineConfig(**kwargs)


def _resolve_backend(spec: str | None, parser: argparse.ArgumentParser):
    spec = spec or os.environ.get(ENV_BACKEND)
    if not spec:
        parser.error(
            f"no backend given; pass --backend or set {ENV_BACKEND} "
            "(synthetic:<scenes.json> or http(s)://host:port)"
        )
    if spec.startswith("synthetic:"):
        path = spec[len("synthetic:"):]
        try:
            return SyntheticBackend(load_scenes(path))
        except (OSError, ValueError, KeyError) as exc:
            parser.error(f"cannot load scenes from {path!r}: {exc}")
    if spec.startswith(("http://", "https://")):
        return HttpBackend(spec)
    parser.error(
        f"unknown backend spec {spec!r}; use synthetic:<scenes.json> or http(s)://…"
    )


def cmd_count(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    families = [bool(args.point), bool(args.box), args.text is not None]
    if sum(families) != 1:
        parser.error("give exactly one prompt family: --point(s), --box(es), or --text")
    backend = _resolve_backend(args.backend, parser)
    cfg = _config_from_args(args)
    if args.mode == "unfiltered":
        cfg = replace(cfg, score_filter=False)
    try:
        image = load_image(args.image)
    except OSError as exc:
        print(f"cannot read image: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        if args.text is not None:
            result = text_count(
                backend, image, args.text, cfg,
                mode="prior" if args.mode == "prior" else "vanilla",
            )
        else:
            prompts = PromptSet(points=tuple(args.point), boxes=tuple(args.box))
            if args.mode == "prior":
                result = prior_guided_count(backend, image, prompts, cfg)
            else:
                result = vanilla_count(backend, image, prompts, cfg)
    except BackendUnreachableError as exc:
        print(f"backend unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except PromptCountError as exc:
        print(f"count failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(json.loads(result.to_json()), indent=2, sort_keys=True))
    if args.overlay:
        save_image(args.overlay, overlay_count(image, result.masks, result.count))
        print(f"overlay written to {args.overlay}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load manifest: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    backend = _resolve_backend(args.backend, parser)
    report_dir = args.report_dir or str(Path(args.manifest).resolve().parent / "report")
    try:
        report = run_benchmark(
            backend,
            manifest,
            cfg=_config_from_args(args),
            prompt_type=args.prompt_type,
            pipeline=args.mode,
            workers=args.workers,
            report_dir=report_dir,
        )
    except BackendUnreachableError as exc:
        print(f"backend unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    print(json.dumps(report.aggregates(), indent=2, sort_keys=True))
    print(f"report written to {report_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    import uvicorn

    from .service import create_service_app

    backend = _resolve_backend(args.backend, parser)
    try:
        backend.capabilities()
    except BackendUnreachableError as exc:
        print(f"backend unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    app = create_service_app(backend, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptcount",
        description="Count objects specified by point, box, or text prompts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    count = sub.add_parser("count", help="count objects in one image")
    count.add_argument("--image", required=True, help="input image path")
    count.add_argument("--point", action="append", type=_parse_point, default=[],
                       metavar="X,Y[,LABEL]", help="exemplar point (repeatable)")
    count.add_argument("--box", action="append", type=_parse_box, default=[],
                       metavar="X0,Y0,X1,Y1", help="exemplar box (repeatable)")
    count.add_argument("--text", default=None, help="text prompt")
    count.add_argument("--mode", choices=("prior", "vanilla", "unfiltered"),
                       default="prior")
    count.add_argument("--backend", default=None)
    count.add_argument("--overlay", default=None, metavar="OUT.png",
                       help="write a mask overlay image")
    _add_config_flags(count)
    count.set_defaults(run=cmd_count)

    bench = sub.add_parser("bench", help="run a manifest benchmark")
    bench.add_argument("--manifest", required=True)
    bench.add_argument("--prompt-type", choices=("box", "point", "text"),
                       default="box")
    bench.add_argument("--mode", choices=("prior", "vanilla", "unfiltered"),
                       default="prior")
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--report-dir", default=None)
    bench.add_argument("--backend", default=None)
    _add_config_flags(bench)
    bench.set_defaults(run=cmd_bench)

    serve = sub.add_parser("serve", help="serve the counting API and UI")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--backend", default=None)
    serve.add_argument("--ui", default=None, help="static UI bundle directory")
    serve.set_defaults(run=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.run(args, parser)


if __name__ == "__main__":
    sys.exit(main())
