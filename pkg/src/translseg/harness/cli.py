"""Command-line interface.

Subcommands: gen-data (cluttered digit canvases or brain half-slices),
train, evaluate, panels, validate-data, and default-config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from ..data.brats import BratsSliceSpec, brats_to_half_slices
from ..data.manifest import DatasetManifest, validate_manifest
from ..data.mnist import CLUTTER_PRESETS, ClutterSpec, generate_cluttered_mnist
from ..data.sources import load_idx_source, synthetic_digit_source
from .checkpoint import load_checkpoint, restore_model
from .config import default_config_yaml, load_config
from .evaluation import evaluate
from .panels import emit_panels
from .training import run_experiment


def _add_gen_data(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gen-data", help="materialize a dataset to disk")
    kind = p.add_subparsers(dest="kind", required=True)

    m = kind.add_parser("mnist", help="cluttered digit canvases")
    m.add_argument("--task", choices=sorted(CLUTTER_PRESETS), required=True)
    m.add_argument("--out", type=Path, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--train", type=int, default=50000)
    m.add_argument("--valid", type=int, default=5000)
    m.add_argument("--test", type=int, default=5000)
    m.add_argument("--labeled-fraction", type=float, default=0.01)
    m.add_argument("--label-digit", type=int, default=9,
                   help="restrict labels to this class (-1 disables)")
    src = m.add_mutually_exclusive_group(required=True)
    src.add_argument("--idx-dir", type=Path,
                     help="directory with the four IDX digit files")
    src.add_argument("--synthetic-digits", type=int, metavar="N",
                     help="render N synthetic glyphs per fold instead")

    b = kind.add_parser("brats", help="brain half-slices from NIfTI volumes")
    b.add_argument("--volumes", type=Path, required=True)
    b.add_argument("--out", type=Path, required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--min-brain-frac", type=float, default=0.25)
    b.add_argument("--min-lesion-frac", type=float, default=0.01)
    b.add_argument("--labeled-fraction", type=float, default=0.01)
    b.add_argument("--sequences", nargs=4,
                   default=["t1", "t2", "t1ce", "flair"])
    b.add_argument("--label-suffix", default="seg")


def _cmd_gen_data(args: argparse.Namespace) -> int:
    if args.kind == "mnist":
        spec = ClutterSpec.from_preset(
            args.task, labeled_fraction=args.labeled_fraction,
            label_digit=None if args.label_digit < 0 else args.label_digit,
            n_train=args.train, n_valid=args.valid, n_test=args.test)
        if args.idx_dir is not None:
            source = load_idx_source(args.idx_dir)
        else:
            source = synthetic_digit_source(args.synthetic_digits,
                                            seed=args.seed)
        manifest = generate_cluttered_mnist(spec, source, args.seed, args.out)
    else:
        spec = BratsSliceSpec(min_brain_frac=args.min_brain_frac,
                              min_lesion_frac_of_brain=args.min_lesion_frac,
                              sequences=tuple(args.sequences),
                              label_suffix=args.label_suffix,
                              labeled_fraction=args.labeled_fraction)
        manifest = brats_to_half_slices(args.volumes, spec, args.out,
                                        master_seed=args.seed)
    print(f"wrote {len(manifest.records)} examples under {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    run_dir = run_experiment(config, resume=args.resume,
                             only_seed=args.seed)
    print(f"run directory: {run_dir}")
    print((run_dir / "report.txt").read_text(), end="")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    model = restore_model(load_checkpoint(args.checkpoint))
    manifest = DatasetManifest.load(args.manifest)
    result = evaluate(model, manifest, args.fold,
                      threshold=args.threshold)
    result.pop("per_image")
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_panels(args: argparse.Namespace) -> int:
    from ..data.batches import evaluation_batches, load_example

    model = restore_model(load_checkpoint(args.checkpoint))
    manifest = DatasetManifest.load(args.manifest)
    if args.domain == "P":
        images, _ = next(evaluation_batches(manifest, args.fold, args.n))
    else:
        records = manifest.select(fold=args.fold, domain="A")[:args.n]
        if not records:
            print(f"no absence examples in fold {args.fold}",
                  file=sys.stderr)
            return 1
        images = torch.stack([
            torch.from_numpy(load_example(manifest, rec)[0])
            for rec in records]).float()
    path = emit_panels(model, images, args.out, domain=args.domain,
                       channel=args.channel)
    print(f"wrote {path}")
    return 0


def _cmd_validate_data(args: argparse.Namespace) -> int:
    manifest = DatasetManifest.load(args.manifest)
    problems = validate_manifest(manifest)
    for problem in problems:
        print(problem, file=sys.stderr)
    print(f"{len(manifest.records)} records, {len(problems)} problems")
    return 1 if problems else 0


def _cmd_default_config(args: argparse.Namespace) -> int:
    print(default_config_yaml(args.variant), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="translseg",
        description="Semi-supervised segmentation via presence/absence "
                    "image translation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_gen_data(sub)

    t = sub.add_parser("train", help="run an experiment from a config file")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--seed", type=int, default=None,
                   help="run only this seed instead of the configured list")
    t.add_argument("--resume", type=Path, default=None)

    e = sub.add_parser("evaluate", help="Dice of a checkpoint on a fold")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--fold", default="test")
    e.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("panels", help="write diagnostic image panels")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fold", default="test")
    p.add_argument("--domain", choices=["P", "A"], default="P")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--channel", type=int, default=0)

    v = sub.add_parser("validate-data", help="check manifest invariants")
    v.add_argument("--manifest", type=Path, required=True)

    d = sub.add_parser("default-config",
                       help="print the config schema with defaults")
    d.add_argument("--variant", default="proposed")

    return parser


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "panels": _cmd_panels,
    "validate-data": _cmd_validate_data,
    "default-config": _cmd_default_config,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
