"""Command line entry point: ``msiqa <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..dataset.factory import MANIFEST_NAME, build_dataset
from ..dataset.manifest import apply_rater_scores, read_manifest, read_rater_scores, write_manifest
from ..dataset.phantoms import write_phantom_set
from .config import TrainConfig, load_config
from .evaluate import INJECT_MODES, evaluate, score_image
from .labels import MODES, synth_labels
from .train import train
from .visualize import export_feature_maps

log = logging.getLogger("msiqa")


def cmd_make_phantoms(args):
    paths = write_phantom_set(args.out, args.patients, args.slices, args.size, args.seed)
    print(f"wrote {len(paths)} phantom slices to {args.out}")


def cmd_build_dataset(args):
    m = build_dataset(args.pristine, args.out, seed=args.seed, train_fraction=args.train_fraction,
                      workers=args.workers)
    print(f"wrote {len(m)} images and {Path(args.out) / MANIFEST_NAME}")


def cmd_synth_labels(args):
    m = synth_labels(read_manifest(args.manifest), args.mode, args.pristine)
    write_manifest(m, args.out or args.manifest)
    print(f"labelled {len(m)} entries ({args.mode} mode)")


def cmd_import_ratings(args):
    m = apply_rater_scores(read_manifest(args.manifest), read_rater_scores(args.ratings))
    write_manifest(m, args.out or args.manifest)
    print(f"applied mean rater scores to {len(m)} entries")


def cmd_train(args):
    overrides = list(args.set or [])
    for flag, key in (("lr", "learning_rate"), ("batch_size", "batch_size"), ("epochs", "epochs"),
                      ("max_steps", "max_steps"), ("seed", "seed"), ("dtype", "dtype")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    cfg = load_config(args.config, overrides, base=TrainConfig.toy() if args.toy else None)
    result = train(cfg, read_manifest(args.manifest), out_dir=args.out)
    print(f"trained {result.steps} steps; train loss {result.initial_loss:.6g} -> {result.final_loss:.6g}")
    print(f"checkpoint: {result.checkpoint}")


def cmd_eval(args):
    report = evaluate(args.checkpoint, read_manifest(args.manifest), args.split or None, inject=args.inject)
    print(report.table())
    if args.csv:
        report.to_csv(args.csv)


def cmd_score(args):
    print(f"{score_image(args.checkpoint, args.image):.6f}")


def cmd_export_features(args):
    for p in export_feature_maps(args.checkpoint, args.image, args.out):
        print(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msiqa", description="Multi-scale no-reference image quality assessment")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantoms", help="write synthetic pristine slices")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=4)
    p.add_argument("--slices", type=int, default=1)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_phantoms)

    p = sub.add_parser("build-dataset", help="distort pristine slices with all 27 recipes")
    p.add_argument("--pristine", required=True, help="directory of {patient}_{slice}.png files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("synth-labels", help="fill manifest scores from recipes or PSNR")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=MODES, default="recipe")
    p.add_argument("--pristine", help="pristine directory for psnr mode (default: <dataset>/pristine)")
    p.add_argument("--out", help="output manifest (default: overwrite)")
    p.set_defaults(func=cmd_synth_labels)

    p = sub.add_parser("import-ratings", help="set scores to the mean of rater CSV columns")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratings", required=True, help="CSV with header path,r1,...,r5")
    p.add_argument("--out")
    p.set_defaults(func=cmd_import_ratings)

    p = sub.add_parser("train", help="train on the manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory for checkpoint and log")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--toy", action="store_true", help="start from the toy-backbone preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, repeatable")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="SROCC/PLCC of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", help="train, test, or '' for all entries")
    p.add_argument("--csv", help="write per-image predictions here")
    p.add_argument("--inject", choices=INJECT_MODES, help="replace predictions (metric self-check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-features", help="write F1..F4, FW, FS visualizations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
