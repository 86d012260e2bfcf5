"""Command-line surface tying the engine together.

Subcommands: synth, train, eval, retrieve, gradcheck, inspect.  Exit codes:
0 on success, 1 on validation or usage failure, 2 on internal error.  Every
run echoes its resolved configuration (including the seed) to stderr;
machine-readable results go to stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import EngineError, EmptyDatasetError, ConfigError
from .evaluation import evaluate, rank
from .gradcheck import run_gradcheck
from .manifest import load_dataset
from .modelpack import load_model_pack, save_model_pack
from .selection import ivrs_weights, pvrs_weights
from .synth import synth_dataset
from .training import RunConfig, compute_streams, fusion_for_inference, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(message)


def _echo(command: str, resolved: dict) -> None:
    print(f"config: {json.dumps({'command': command, **resolved})}", file=sys.stderr)


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid --k list {text!r}") from exc
    if not ks or any(k < 1 for k in ks):
        raise ConfigError(f"--k needs positive integers, got {text!r}")
    return ks


def _load_config_file(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_json_dict(data)


def _inference_setup(args):
    """Shared model/config resolution for eval, retrieve, and inspect."""
    bundle = load_dataset(args.data)
    if args.model is not None and args.zero_mlp:
        raise ConfigError("--model and --zero-mlp are mutually exclusive")
    if args.model is not None:
        params, config = load_model_pack(args.model)
        config = config.resolved(bundle.dim)
        zero_mlp = False
    else:
        if not args.zero_mlp:
            raise ConfigError("provide --model PATH or --zero-mlp")
        params = None
        config = RunConfig().resolved(bundle.dim)
        zero_mlp = True
    return bundle, params, config, zero_mlp


def _cmd_synth(args) -> int:
    resolved = {
        "out": args.out,
        "seed": args.seed,
        "dim": args.dim,
        "train_n": args.train_n,
        "eval_n": args.eval_n,
        "gallery_extra": args.gallery_extra,
        "patches": args.patches,
        "instances": args.instances,
        "noise": args.noise,
        "plant": args.plant,
    }
    _echo("synth", resolved)
    synth_dataset(
        seed=args.seed,
        dim=args.dim,
        n_train=args.train_n,
        n_eval=args.eval_n,
        gallery_extra=args.gallery_extra,
        n_patches=args.patches,
        n_instances=args.instances,
        noise_sigma=args.noise,
        plant=args.plant,
        out_dir=args.out,
    )
    print(json.dumps({"written": args.out, "samples": args.train_n + args.eval_n}))
    return 0


def _cmd_train(args) -> int:
    bundle = load_dataset(args.data)
    config = _load_config_file(args.config).resolved(bundle.dim)
    _echo("train", {"data": args.data, "seed": config.seed, **config.to_json_dict()})
    train_samples = bundle.split("train")
    if not train_samples:
        raise EmptyDatasetError(f"{args.data}: no samples in split 'train'")
    eval_samples = bundle.split(args.eval_split) if args.eval_split else None
    if args.eval_split and not eval_samples:
        raise EmptyDatasetError(f"{args.data}: no samples in split {args.eval_split!r}")
    params, log = train(
        train_samples, list(bundle.gallery), config, eval_dataset=eval_samples
    )
    save_model_pack(args.out_model, params, log.config)
    if args.log:
        Path(args.log).write_text(log.to_jsonl(), encoding="utf-8")
    print(
        json.dumps(
            {
                "model": args.out_model,
                "epochs": len(log.epochs),
                "final_mean_loss": log.epochs[-1].mean_loss,
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    bundle, params, config, zero_mlp = _inference_setup(args)
    ks = _parse_ks(args.k)
    _echo(
        "eval",
        {
            "data": args.data,
            "model": args.model,
            "zero_mlp": zero_mlp,
            "split": args.split,
            "k": ks,
            "seed": config.seed,
            **config.to_json_dict(),
        },
    )
    samples = bundle.split(args.split)
    if not samples:
        raise EmptyDatasetError(f"{args.data}: no samples in split {args.split!r}")
    report = evaluate(samples, list(bundle.gallery), params, config, ks=ks, zero_mlp=zero_mlp)
    blob = json.dumps(report.to_json_dict())
    print(blob)
    if args.out:
        Path(args.out).write_text(blob + "\n", encoding="utf-8")
    return 0


def _find_sample(bundle, query_id: str, split: str | None):
    hits = []
    for name, samples in bundle.by_split.items():
        if split and name != split:
            continue
        for sample in samples:
            if sample.id == query_id:
                hits.append((name, sample))
    if not hits:
        raise EmptyDatasetError(f"query id {query_id!r} not found")
    if len(hits) > 1:
        raise ConfigError(
            f"query id {query_id!r} appears in splits "
            f"{[name for name, _ in hits]}; disambiguate with --split"
        )
    return hits[0][1]


def _cmd_retrieve(args) -> int:
    bundle, params, config, zero_mlp = _inference_setup(args)
    _echo(
        "retrieve",
        {
            "data": args.data,
            "model": args.model,
            "zero_mlp": zero_mlp,
            "query_id": args.query_id,
            "top": args.top,
            "seed": config.seed,
        },
    )
    if args.top < 1:
        raise ConfigError("--top must be positive")
    sample = _find_sample(bundle, args.query_id, args.split)
    model = fusion_for_inference(config, params=params, zero_mlp=zero_mlp)
    q, _ = model.forward(compute_streams(sample, config.variant))
    result = rank(q, list(bundle.gallery), query_id=sample.id)
    top = min(args.top, len(result.ordered_gallery_ids))
    print(
        json.dumps(
            {
                "query_id": result.query_id,
                "target_id": sample.target_id,
                "results": [
                    {"id": gid, "score": score}
                    for gid, score in zip(
                        result.ordered_gallery_ids[:top], result.scores[:top]
                    )
                ],
            }
        )
    )
    return 0


def _cmd_gradcheck(args) -> int:
    hidden = args.hidden if args.hidden is not None else 4 * args.dim
    _echo(
        "gradcheck",
        {"seed": args.seed, "dim": args.dim, "hidden": hidden, "eps": args.eps, "tol": args.tol},
    )
    ok, results = run_gradcheck(args.seed, args.dim, hidden, args.eps, args.tol)
    for name, err in results:
        status = "ok" if err <= args.tol else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} tol={args.tol:.1e} {status}")
    print("gradcheck passed" if ok else "gradcheck FAILED")
    return 0 if ok else 1


def _cmd_inspect(args) -> int:
    bundle, params, config, zero_mlp = _inference_setup(args)
    _echo(
        "inspect",
        {
            "data": args.data,
            "model": args.model,
            "zero_mlp": zero_mlp,
            "query_id": args.query_id,
            "out": args.out,
            "seed": config.seed,
        },
    )
    sample = _find_sample(bundle, args.query_id, args.split)
    rows: list[list[str]] = [["kind", "label", "values"]]

    def fmt(vec) -> list[str]:
        return [repr(float(v)) for v in np.asarray(vec)]

    patch_attn = pvrs_weights(sample.patch_set, sample.r_rt, sample.r_dt)
    rows.append(["patch", "alpha_plus", *fmt(patch_attn.alpha_plus)])
    rows.append(["patch", "alpha_minus", *fmt(patch_attn.alpha_minus)])
    if not sample.instance_set.is_empty:
        inst_attn = ivrs_weights(sample.instance_set, sample.r_rt, sample.r_dt)
        rows.append(["instance", "raw_plus", *fmt(inst_attn.alpha_plus_raw)])
        rows.append(["instance", "raw_minus", *fmt(inst_attn.alpha_minus_raw)])
        rows.append(["instance", "norm_plus", *fmt(inst_attn.alpha_plus_norm)])
        rows.append(["instance", "norm_minus", *fmt(inst_attn.alpha_minus_norm)])
        rows.append(["instance", "net", *fmt(inst_attn.net)])

    model = fusion_for_inference(config, params=params, zero_mlp=zero_mlp)
    _, trace = model.forward(compute_streams(sample, config.variant))
    for name, betas in model.betas(trace).items():
        rows.append(["beta", name, *fmt(betas)])

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)
    print(json.dumps({"written": args.out, "rows": len(rows) - 1}))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cirfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=124)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--train-n", type=int, default=256)
    p.add_argument("--eval-n", type=int, default=64)
    p.add_argument("--gallery-extra", type=int, default=64)
    p.add_argument("--patches", type=int, default=8)
    p.add_argument("--instances", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--plant", choices=("equal", "skewed"), default="equal")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train fusion parameters on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="JSON file with run-config keys")
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", default=None, help="write one JSON object per epoch here")
    p.add_argument("--eval-split", default=None, help="also evaluate this split per epoch")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="rank a split against the gallery and report recalls")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--zero-mlp", action="store_true", help="evaluate the zero-MLP baseline")
    p.add_argument("--split", default="val")
    p.add_argument("--k", default="1,5,10,50")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("retrieve", help="rank the gallery for one query")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--zero-mlp", action="store_true")
    p.add_argument("--query-id", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=124)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="dump attention weights and betas for one query as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--zero-mlp", action="store_true")
    p.add_argument("--query-id", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
