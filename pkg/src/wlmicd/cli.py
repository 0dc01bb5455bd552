"""Command-line entry point: ``wlmicd <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 stage failure, 3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import eroc, evaluate, features, pipeline, simulate
from .detect import StageError, stage
from .imgcore import load_image, load_mask, save_image, save_mask
from .normalize import hhm_normalize

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_PARTIAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for stage failures here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _odd_window(text: str) -> int:
    value = int(text)
    if value < 3 or value % 2 == 0:
        raise argparse.ArgumentTypeError("window must be an odd integer >= 3")
    return value


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    # Defaults are None so that unset flags fall through to the config file.
    p.add_argument("--feature", choices=features.METHODS)
    p.add_argument("--window", type=_odd_window)
    p.add_argument("--delta-thresh", type=int)
    p.add_argument("--glrt-gamma", type=float)
    p.add_argument("--glrt-fpr", type=float)
    p.add_argument("--eroc-threshold-scale", type=float)
    p.add_argument("--no-eroc", dest="use_eroc", action="store_const", const=False)
    p.add_argument("--grow-threshold", type=float, help="SimRate percentage below which pixels grow")
    p.add_argument("--seed-radius", type=int, help="seed search distance from the tumor edge (px)")
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)
    p.add_argument("--exclude-zero", action="store_const", const=True,
                   help="leave intensity 0 out of the normalization histograms")
    p.add_argument("--blur-sigma", type=float, help="Gaussian pre-blur std in pixels")
    p.add_argument("--eval-full-frame", action="store_const", const=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat key = value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wlmicd", description="Tumor-focused change detection for serial grayscale images.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("normalize", help="histogram-normalize an image pair")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--exclude-zero", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("roi", help="extract the changed region of interest")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--eroc-threshold-scale", type=float, default=1.0)
    p.add_argument("--normalize", action="store_true", help="normalize the pair first")
    p.add_argument("--out-dir")

    p = sub.add_parser("detect", help="run the full detection pipeline on a pair")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tumor-mask", required=True)
    p.add_argument("--ground-truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int)
    _add_pipeline_flags(p)

    p = sub.add_parser("simulate", help="synthesize a follow-up image with ground truth")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tumor-mask", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--direction", choices=("shrink", "grow"), default="shrink")
    p.add_argument("--deform-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("phantom", help="write a synthetic base image and tumor mask")
    p.add_argument("--texture", choices=simulate.TEXTURES, default="blobs")
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--tumor-radius", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("evaluate", help="score a change mask against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--roi", help="roi.json written by the roi subcommand")
    p.add_argument("--band", choices=(*evaluate.BANDS, evaluate.OVERALL), default=evaluate.OVERALL)
    p.add_argument("--out-dir")

    p = sub.add_parser("sweep", help="run a simulation sweep for WLMI and GLRT")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="JSON manifest of simulation entries")
    src.add_argument("--suite", action="store_true", help="use the built-in 60-pair suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", help="flat key = value config file for pipeline defaults")
    return parser


_PIPELINE_KEYS = ("feature", "window", "delta_thresh", "glrt_gamma", "glrt_fpr", "use_eroc",
                  "eroc_threshold_scale", "grow_threshold", "seed_radius", "normalize",
                  "exclude_zero", "blur_sigma", "eval_full_frame", "seed", "jobs")


def _config_from_args(args) -> pipeline.PipelineConfig:
    file_values = {}
    if args.config:
        try:
            file_values = pipeline.read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    overrides = {k: getattr(args, k) for k in _PIPELINE_KEYS}
    overrides.update(a=args.a, b=args.b, tumor_mask=args.tumor_mask,
                     ground_truth=args.ground_truth, out_dir=args.out_dir)
    return pipeline.build_config(file_values, overrides)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_normalize(args) -> int:
    with stage("load"):
        a, b = load_image(args.a), load_image(args.b)
    with stage("preprocess"):
        na, nb = hhm_normalize(a, b, exclude_zero=args.exclude_zero)
    with stage("write"):
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_image(na, out / "a_normalized.png")
        save_image(nb, out / "b_normalized.png")
    return EXIT_OK


def cmd_roi(args) -> int:
    if args.eroc_threshold_scale < 0:
        raise UsageError("--eroc-threshold-scale must be >= 0")
    with stage("load"):
        a, b = load_image(args.a), load_image(args.b)
    if args.normalize:
        with stage("preprocess"):
            a, b = hhm_normalize(a, b)
    with stage("eroc"):
        roi = eroc.extract_roi(a, b, args.eroc_threshold_scale)
    payload = roi.to_dict()
    _print_json(payload)
    if args.out_dir:
        with stage("write"):
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            pipeline.write_json(Path(args.out_dir) / "roi.json", payload)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config_from_args(args)
    result = pipeline.run_pipeline(cfg)
    det = result.detection
    summary = {"roi": det.roi.to_dict(), "changed_pixels": int(det.mask.sum()),
               "artifacts": result.artifacts}
    if result.report is not None:
        summary["metrics"] = result.report.to_dict()["metrics"]
    _print_json(summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = simulate.SimSpec(args.direction, args.fraction, args.deform_sigma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    with stage("load"):
        img = load_image(args.input)
        tumor = load_mask(args.tumor_mask)
    with stage("simulate"):
        sim = simulate.simulate(img, tumor, spec)
    prefix = args.out_prefix
    with stage("write"):
        Path(prefix).parent.mkdir(parents=True, exist_ok=True)
        save_image(sim.image, f"{prefix}_image.png")
        save_mask(sim.ground_truth, f"{prefix}_gt.png")
        sidecar = {
            "tumor_volume": sim.tumor_volume,
            "md_mm": sim.md_mm,
            "fraction": spec.fraction,
            "changed_pixels": int(sim.ground_truth.sum()),
            "band": simulate.size_band(spec.fraction),
            "direction": spec.direction,
            "deform_sigma": spec.deform_sigma,
            "seed": spec.rng_seed,
        }
        pipeline.write_json(f"{prefix}.json", sidecar)
    _print_json(sidecar)
    return EXIT_OK


def cmd_phantom(args) -> int:
    if args.texture not in simulate.TEXTURES or args.size < 8 or args.tumor_radius < 1:
        raise UsageError("invalid phantom parameters")
    img, tumor = simulate.make_phantom(args.texture, args.size, args.tumor_radius,
                                       args.seed, noise=args.noise)
    with stage("write"):
        Path(args.out_prefix).parent.mkdir(parents=True, exist_ok=True)
        save_image(img, f"{args.out_prefix}_image.png")
        save_mask(tumor, f"{args.out_prefix}_tumor.png")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    with stage("load"):
        pred, gt = load_mask(args.pred), load_mask(args.gt)
        roi = None
        if args.roi:
            roi = eroc.Roi(**json.loads(Path(args.roi).read_text()))
    with stage("evaluate"):
        report = evaluate.metrics(evaluate.confusion(pred, gt, roi), band=args.band,
                                  config={"pred": args.pred, "gt": args.gt, "roi": args.roi})
    payload = report.to_dict()
    _print_json(payload)
    if args.out_dir:
        with stage("write"):
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            pipeline.write_json(Path(args.out_dir) / "report.json", payload)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.suite:
        manifest = pipeline.suite_manifest()
        base_dir = "."
    else:
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read manifest: {exc}") from exc
        base_dir = str(Path(args.manifest).parent)
    if isinstance(manifest, list):
        manifest = {"entries": manifest}
    if args.config:
        file_values = pipeline.read_config_file(args.config)
        manifest["defaults"] = {**file_values, **manifest.get("defaults", {})}
    sweep = pipeline.run_sweep(manifest, args.out_dir, jobs=args.jobs, base_dir=base_dir)
    for entry_id, err in sweep.failures:
        print(f"FAILED {entry_id}: {err}", file=sys.stderr)
    for method, table in sweep.tables.items():
        sys.stdout.write(evaluate.aggregate_csv(table, method))
    return EXIT_OK if sweep.ok else EXIT_PARTIAL


COMMANDS = {
    "normalize": cmd_normalize,
    "roi": cmd_roi,
    "detect": cmd_detect,
    "simulate": cmd_simulate,
    "phantom": cmd_phantom,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"wlmicd: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except (UsageError, ValueError, KeyError) as exc:
        print(f"wlmicd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
