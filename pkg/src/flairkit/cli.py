"""``flairkit`` command line: preprocess, infer, postprocess, split, evaluate, report, phantom."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import cohort, phantom, pipeline, postprocess, preprocess, report, sliding_window
from .config import Config
from .volume import load_mask, load_probability, load_volume, save_volume

log = logging.getLogger("flairkit")


def _sidecar(path: Path) -> Path:
    name = path.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return path.with_name(name[: -len(ext)] + ".json")
    return path.with_name(name + ".json")


def _with_suffix(path: Path, suffix: str) -> Path:
    name = path.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return path.with_name(name[: -len(ext)] + suffix + ext)
    return path.with_name(name + suffix)


def cmd_preprocess(args, config: Config) -> int:
    vol = load_volume(args.inp)
    out, meta = preprocess.preprocess_pipeline(vol, config)
    save_volume(out, args.out)
    _sidecar(Path(args.out)).write_text(meta.to_json() + "\n")
    if args.mask:
        mask_out = Path(args.mask_out) if args.mask_out else _with_suffix(Path(args.out), "_mask")
        save_volume(preprocess.map_mask(load_mask(args.mask), meta), mask_out)
    return 0


def cmd_infer(args, config: Config) -> int:
    vol = load_volume(args.inp)
    predictor = sliding_window.parse_predictor(args.predictor, case_name=Path(args.inp).name)
    patch = args.patch if args.patch is not None else config.patch_size
    overlap = args.overlap if args.overlap is not None else config.overlap
    grid = sliding_window.plan_tiles(vol.dims, patch, overlap)
    save_volume(sliding_window.stitch(vol, predictor, grid, jobs=args.jobs), args.out)
    return 0


def cmd_postprocess(args, config: Config) -> int:
    prob = load_probability(args.prob)
    brain = load_mask(args.brain) if args.brain else None
    save_volume(postprocess.postprocess_prediction(prob, args.threshold, brain, config), args.out)
    return 0


def cmd_split(args, config: Config) -> int:
    records = cohort.read_manifest(Path(args.manifest))
    k = args.k if args.k is not None else config.k_folds
    plan = cohort.stratified_split(records, k, config.seed, config.volume_bins_ml)
    Path(args.out).write_text(plan.to_json() + "\n")
    return 0


def cmd_evaluate(args, config: Config) -> int:
    records = cohort.read_manifest(Path(args.manifest))
    plan = cohort.FoldPlan.from_json(Path(args.folds).read_text())
    result = pipeline.run_evaluation(records, plan, config, jobs=args.jobs)
    result.write(args.out_dir)
    for case_id, err in result.failures:
        print(f"failed: {case_id}: {err}", file=sys.stderr)
    return 0 if result.ok else 1


def cmd_report(args, config: Config) -> int:
    metrics = report.read_case_csv(Path(args.cases).read_text())
    rows = report.aggregate(metrics, args.group_by.split(","))
    text = report.emit_table(rows, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.scatter:
        Path(args.scatter).write_text(report.emit_scatter_data(metrics))
    return 0


def cmd_phantom(args, config: Config) -> int:
    vol, mask = phantom.parse_phantom_spec(Path(args.spec).read_text())
    save_volume(vol, args.out_vol)
    save_volume(mask, args.out_mask)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flairkit", description=__doc__)
    parser.add_argument("--config", help="JSON file overriding protocol constants")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample, crop, clip and normalise a volume")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask")
    p.add_argument("--mask-out")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("infer", help="sliding-window inference with a built-in predictor")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictor", required=True, help="constant:<p> | sphere:<cx,cy,cz,r> | external:<dir>")
    p.add_argument("--patch", type=int)
    p.add_argument("--overlap", type=float)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("postprocess", help="brain mask, threshold and component filter")
    p.add_argument("--prob", required=True)
    p.add_argument("--brain")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("split", help="patient-wise stratified folds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int)
    # also accepted after the subcommand; SUPPRESS keeps the global value when absent
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("evaluate", help="run the full evaluation over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate a per-case CSV into a results table")
    p.add_argument("--cases", required=True)
    p.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    p.add_argument("--group-by", default="test_set,target")
    p.add_argument("--out")
    p.add_argument("--scatter", help="also write volume-vs-dice scatter data here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("phantom", help="write a synthetic volume and mask from a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-vol", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    config = Config.load(args.config) if args.config else Config()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    try:
        return args.func(args, config)
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
