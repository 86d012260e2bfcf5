#!/usr/bin/env python3
"""Train and evaluate every ablation variant on one planted fixture.

Reports per-variant recalls on the validation split.  No ordering between
variants is asserted; this is a switchboard exercise, not a benchmark.
"""

import argparse
import tempfile
from pathlib import Path

from cirfuse.evaluation import evaluate
from cirfuse.manifest import load_dataset
from cirfuse.synth import synth_dataset
from cirfuse.training import ABLATION_GRID, RunConfig, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=None, help="work directory (default: temp)")
    parser.add_argument("--seed", type=int, default=124)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--plant", choices=("equal", "skewed"), default="skewed")
    args = parser.parse_args()

    workdir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="ablation-"))
    data = workdir / "data"
    synth_dataset(
        seed=args.seed, dim=args.dim, n_train=128, n_eval=32, gallery_extra=32,
        n_patches=8, n_instances=4, noise_sigma=0.05, plant=args.plant, out_dir=data,
    )
    bundle = load_dataset(data)
    gallery = list(bundle.gallery)

    print(f"{'fusion':16s} {'M-T':3s} {'T-T':3s} {'PV':3s} {'IV':3s}  recalls")
    for variant in ABLATION_GRID:
        config = RunConfig(
            tau=1.0, batch_size=16, epochs=args.epochs, learning_rate=1e-4,
            seed=args.seed, hidden=8, variant=variant,
        ).resolved(bundle.dim)
        params, _ = train(bundle.split("train"), gallery, config)
        report = evaluate(bundle.split("val"), gallery, params, config, ks=(1, 5, 10))
        flags = [
            "y" if f else "-"
            for f in (variant.use_mod_text, variant.use_target_text,
                      variant.use_pvrs, variant.use_ivrs)
        ]
        print(
            f"{variant.fusion:16s} {flags[0]:3s} {flags[1]:3s} {flags[2]:3s} {flags[3]:3s}  "
            f"{report.to_json_dict()}"
        )


if __name__ == "__main__":
    main()
