"""Serve a model checkpoint over the segmentation backend wire protocol.

    promptcount-model-backend --config backend.json [--host H] [--port P]
    promptcount-model-backend --checkpoint weights.pt

Flags override config-file values. Startup fails with exit code 1 and an
actionable message when the checkpoint is missing or unreadable.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import BackendConfig, load_config
from .errors import ModelBackendError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptcount-model-backend",
        description=__doc__.splitlines()[0],
    )
    parser.add_argument("--config", help="JSON config with checkpoint/device/bounds")
    parser.add_argument("--checkpoint", help="weights path (overrides the config)")
    parser.add_argument("--device", help="torch device (overrides the config)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config and not args.checkpoint:
        parser.error("need --config or --checkpoint")
    try:
        if args.config:
            config = load_config(args.config)
            if args.checkpoint:
                config = replace(config, checkpoint=args.checkpoint)
            if args.device:
                config = replace(config, device=args.device)
        else:
            config = BackendConfig(checkpoint=args.checkpoint, device=args.device or "cpu")

        # imports deferred so --help and config errors stay fast
        import uvicorn

        from promptcount.wire import create_backend_app

        from .backend import ModelBackend

        backend = ModelBackend.from_config(config)
        caps = backend.capabilities()
        print(
            f"serving checkpoint '{config.checkpoint}' on "
            f"http://{args.host}:{args.port} "
            f"(stride {caps.feature_stride}, {caps.feature_channels} channels)",
            flush=True,
        )
        uvicorn.run(create_backend_app(backend), host=args.host, port=args.port)
    except ModelBackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
