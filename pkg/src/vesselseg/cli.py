"""Batch command line: ``vesselseg <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .exceptions import DataIOError, InvariantViolation, ValidationError, VesselSegError
from .features import FEATURE_GROUPS, build_stack, write_stack, write_text
from .filters import BRIGHT_ON_DARK, DARK_ON_BRIGHT
from .forest import load_model, permutation_importance, save_model
from .growseg import parse_seed_list
from .manifest import load_manifest
from .metrics import evaluate
from .pipeline import (
    VesselSegmenter,
    held_out_samples,
    load_entry,
    load_scores,
    run_pipeline,
    save_scores,
    write_report,
    write_roc,
)
from .raster import check_mask, load_image, load_mask, save_mask

log = logging.getLogger("vesselseg")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


def _forest_flags(p):
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--mtry", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-cap", type=int, default=None)


def _conn_flags(p):
    p.add_argument("--conn-mode", choices=("exponential", "fraction"), default="fraction")
    p.add_argument("--conn-form", choices=("binary", "continuous"), default="binary")
    p.add_argument("--t-c", type=float, default=0.05)
    p.add_argument("--radial-fraction", type=float, default=0.007)


def _polarity_flag(p):
    p.add_argument("--polarity", choices=(DARK_ON_BRIGHT, BRIGHT_ON_DARK), default=DARK_ON_BRIGHT)


def _segmenter(args, **extra):
    return VesselSegmenter(
        n_trees=args.trees, max_depth=args.depth, mtry=args.mtry, random_state=args.seed,
        sample_cap=args.sample_cap, conn_mode=args.conn_mode, feature_form=args.conn_form,
        t_c=args.t_c, radial_fraction=args.radial_fraction, **extra,
    )


def _check_positive(args):
    for name in ("trees", "mtry", "depth", "sample_cap"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            raise ValidationError(f"--{name.replace('_', '-')} must be >= 1")


# -- subcommands ---------------------------------------------------------------


def cmd_extract_features(args):
    stack = build_stack(load_image(args.image), args.polarity)
    if args.text:
        write_text(stack, args.out)
    else:
        write_stack(stack, args.out)


def cmd_train(args):
    _check_positive(args)
    manifest = load_manifest(args.manifest)
    seg = _segmenter(args, polarity=manifest.polarity)
    data = [load_entry(manifest, i) for i in manifest.train]
    seg.fit([d[0] for d in data], [d[1] for d in data], [d[2] for d in data])
    save_model(seg.forest_, args.model_out)
    log.info("model written to %s", args.model_out)


def cmd_seeds(args):
    image = load_image(args.image)
    fov = None if args.fov is None else check_mask(load_mask(args.fov), image.shape, "fov")
    seeds = VesselSegmenter(polarity=args.polarity).seeds(image, fov)
    save_mask(seeds.to_mask(image.shape), args.out)
    log.info("%d seed pixels", len(seeds.pixels))


def cmd_segment(args):
    image = load_image(args.image)
    fov = None if args.fov is None else check_mask(load_mask(args.fov), image.shape, "fov")
    seg = VesselSegmenter(
        conn_mode=args.conn_mode, feature_form=args.conn_form, t_c=args.t_c,
        radial_fraction=args.radial_fraction, polarity=args.polarity, threshold=args.threshold,
    )
    seg.forest_ = load_model(args.model)
    seeds = None if args.seed_list is None else parse_seed_list(args.seed_list)
    mask, scores = seg.segment(image, fov, seeds)
    save_mask(mask, args.out_mask)
    if args.out_scores:
        save_scores(scores, args.out_scores)


def cmd_evaluate(args):
    gt = load_mask(args.gt)
    pred = check_mask(load_mask(args.pred), gt.shape, "prediction")
    fov = None if args.fov is None else check_mask(load_mask(args.fov), gt.shape, "fov")
    scores = None
    if args.scores is not None:
        scores = load_scores(args.scores)
        if scores.shape != gt.shape:
            raise ValidationError(f"scores {scores.shape} vs ground truth {gt.shape}")
    report = evaluate(pred, gt, fov, scores)
    write_report([("image", report)], args.out)
    if args.roc_out and report.roc:
        write_roc(report.roc, args.roc_out)


def cmd_run(args):
    _check_positive(args)
    manifest = load_manifest(args.manifest)
    result = run_pipeline(manifest, args.out_dir, _segmenter(args, threshold=args.threshold))
    m = result.mean
    log.info("mean accuracy %s, mean auc %s", m.accuracy, m.auc)


def cmd_rank_features(args):
    manifest = load_manifest(args.manifest)
    model = load_model(args.model)
    seg = VesselSegmenter(
        conn_mode=args.conn_mode, feature_form=args.conn_form, t_c=args.t_c,
        radial_fraction=args.radial_fraction, polarity=manifest.polarity,
    )
    X, y = held_out_samples(manifest, seg, cap=args.sample_cap, seed=args.seed)
    ranking = permutation_importance(model, X, y, FEATURE_GROUPS, n_repeats=args.repeats,
                                     random_state=args.seed)
    lines = ["rank,group,importance"]
    lines += [f"{k},{name},{drop:.6f}" for k, (name, drop) in enumerate(ranking, start=1)]
    try:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataIOError(f"{args.out}: {exc.strerror or exc}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="vesselseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="write the 35 grey-level planes of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--text", action="store_true", help="plain-text export instead of binary cache")
    _polarity_flag(p)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", help="train a forest on a manifest's train ids")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-out", required=True)
    _forest_flags(p)
    _conn_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("seeds", help="automatic Frangi seed mask")
    p.add_argument("--image", required=True)
    p.add_argument("--fov")
    p.add_argument("--out", required=True)
    _polarity_flag(p)
    p.set_defaults(func=cmd_seeds)

    p = sub.add_parser("segment", help="grow a vessel mask with a trained model")
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-scores")
    p.add_argument("--seed-list", help='manual seeds "r,c;r,c"')
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--fov")
    _conn_flags(p)
    _polarity_flag(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="score a predicted mask")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--fov")
    p.add_argument("--scores")
    p.add_argument("--out", required=True)
    p.add_argument("--roc-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="train, segment and evaluate a whole manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    _forest_flags(p)
    _conn_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rank-features", help="permutation importance per feature group")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-cap", type=int, default=20000)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _conn_flags(p)
    p.set_defaults(func=cmd_rank_features)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means I/O
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except VesselSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AssertionError, InvariantViolation, FloatingPointError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
