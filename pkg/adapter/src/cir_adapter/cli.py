"""Adapter command line: build manifests, check the reasoning endpoint."""

from __future__ import annotations

import argparse
import json
import sys

from .config import AdapterConfig, check_endpoint
from .errors import AdapterError
from .pipeline import build_manifest, read_triples


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(args) -> AdapterConfig:
    config = (
        AdapterConfig.from_json_file(args.config) if args.config else AdapterConfig()
    )
    return config.with_overrides(
        mllm_endpoint=args.endpoint,
        mllm_model=args.model,
        dim=args.dim,
    )


def _cmd_build(args) -> int:
    config = _load_config(args)
    print(
        "config: "
        + json.dumps(
            {
                "command": "build",
                "input": args.input,
                "out": args.out,
                "split": args.split,
                "vision_encoder": config.vision_encoder,
                "text_encoder": config.text_encoder,
                "segmenter": config.segmenter,
                "mllm_endpoint": config.mllm_endpoint,
                "mllm_model": config.mllm_model,
                "box_threshold": config.box_threshold,
                "text_threshold": config.text_threshold,
                "dim": config.dim,
            }
        ),
        file=sys.stderr,
    )
    triples = read_triples(args.input, images_root=args.images_root)
    out = build_manifest(triples, args.out, config, split=args.split)
    print(json.dumps({"written": str(out), "samples": len(triples)}))
    return 0


def _cmd_check(args) -> int:
    config = _load_config(args)
    check_endpoint(config)
    print(json.dumps({"endpoint": config.mllm_endpoint, "reachable": True}))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cir-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="encode images and texts into a dataset directory")
    p.add_argument("--input", required=True, help="JSONL or CSV of reference/text/target rows")
    p.add_argument("--out", required=True)
    p.add_argument("--images-root", default=None, help="base for relative image paths")
    p.add_argument("--config", default=None, help="adapter config JSON")
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--endpoint", default=None, help="override the reasoning endpoint")
    p.add_argument("--model", default=None, help="override the reasoning model name")
    p.add_argument("--dim", type=int, default=None, help="override output dimension")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("check", help="verify the reasoning endpoint is reachable")
    p.add_argument("--config", default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--dim", type=int, default=None)
    p.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
