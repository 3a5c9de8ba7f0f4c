"""Command-line entry point.

Subcommands: synth, blend, validate, ocr-filter, eval, fuse-check.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="textscene", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize a text-scene dataset")
    p_synth.add_argument("--config", required=True, help="key = value config file")
    p_synth.add_argument("--out", help="override out_dir")
    p_synth.add_argument("--count", type=int, help="override sample count")
    p_synth.add_argument("--seed", type=int, help="override dataset_seed")
    p_synth.add_argument("--workers", type=int, help="override worker count")
    p_synth.add_argument("--fresh", action="store_true", help="discard any stale journal")

    p_blend = sub.add_parser("blend", help="gradient-domain composite of one image pair")
    p_blend.add_argument("--target", required=True)
    p_blend.add_argument("--source", required=True)
    p_blend.add_argument("--mask", required=True, help="nonzero pixels are re-solved")
    p_blend.add_argument("--mode", choices=("import", "mixed"), default="mixed")
    p_blend.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="check a manifest against the placement rules")
    p_val.add_argument("--manifest", required=True)
    p_val.add_argument("--root", help="directory image refs resolve against (default: manifest dir)")

    p_filter = sub.add_parser("ocr-filter", help="drop samples with unsatisfactory transcriptions")
    p_filter.add_argument("--dataset", required=True)
    p_filter.add_argument("--transcriptions", required=True)
    p_filter.add_argument("--threshold", type=float, default=0.8)
    p_filter.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--metrics", default="ocr,ned,ap", help="comma list of ocr,ned,ap")
    p_eval.add_argument("--iou-thresh", type=float, default=0.5)
    p_eval.add_argument("--report", help="write the JSON report here instead of stdout")

    p_fuse = sub.add_parser("fuse-check", help="gradient and invariant checks of the fusion math")
    p_fuse.add_argument("--seed", type=int, default=0)
    p_fuse.add_argument("--seeds", type=int, default=10, help="number of seeds starting at --seed")
    p_fuse.add_argument("--dims", default="1,3,4", help="B,T,C for the random cases")
    p_fuse.add_argument("--layers", default="0,1,2,3", help="fusion attach indices")
    p_fuse.add_argument("--report", required=True, help="output JSON path, - for stdout")
    return parser


def cmd_synth(args) -> int:
    from . import pipeline
    from .manifest import ManifestError

    try:
        config = pipeline.load_config(
            args.config,
            overrides={
                "out_dir": args.out,
                "count": args.count,
                "dataset_seed": args.seed,
                "workers": args.workers,
            },
        )
    except (ManifestError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        summary = pipeline.run_synth(config, fresh=args.fresh)
    except ManifestError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_blend(args) -> int:
    from . import blend, images

    target = images.load_image(args.target)
    source = images.load_image(args.source)
    mask = images.load_glyph_image(args.mask) > 0
    if target.shape != source.shape or target.shape[:2] != mask.shape:
        print("data error: target/source/mask dims mismatch", file=sys.stderr)
        return EXIT_DATA
    try:
        out = blend.seamless_clone(target, source, mask, mode=args.mode)
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except blend.NoConvergence as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    images.save_image(out, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from . import images
    from .manifest import ManifestError, parse_sample, validate_filtering_rules

    root = Path(args.root) if args.root else Path(args.manifest).resolve().parent
    failures = 0
    total = 0
    with open(args.manifest, "rb") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                sample = parse_sample(line)
            except ManifestError as exc:
                print(f"line {lineno}: parse error: {exc}")
                failures += 1
                continue
            image_path = root / sample.image_ref
            if not image_path.exists():
                print(f"line {lineno}: missing image {sample.image_ref}")
                failures += 1
                continue
            h, w = images.load_image(image_path).shape[:2]
            try:
                sample.check_bounds((w, h))
            except ManifestError as exc:
                print(f"line {lineno}: {exc}")
                failures += 1
                continue
            report = validate_filtering_rules(sample, (w, h))
            if report.passed:
                print(f"line {lineno}: PASS {sample.image_ref}")
            else:
                rules = sorted(report.violated_rules())
                print(f"line {lineno}: FAIL {sample.image_ref} rules={rules}")
                failures += 1
    print(f"{total - failures}/{total} samples pass")
    return EXIT_OK if failures == 0 else EXIT_DATA


def cmd_ocr_filter(args) -> int:
    from . import pipeline
    from .manifest import ManifestError

    try:
        summary = pipeline.ocr_filter(args.dataset, args.transcriptions, args.threshold, args.out)
    except ManifestError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import pipeline
    from .manifest import ManifestError

    selectors = tuple(s.strip() for s in args.metrics.split(",") if s.strip())
    unknown = set(selectors) - {"ocr", "ned", "ap"}
    if unknown:
        print(f"usage error: unknown metrics {sorted(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = pipeline.evaluate(args.pred, args.gt, selectors, args.iou_thresh)
    except (ManifestError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.report}")
    else:
        print(text)
    return EXIT_OK


def cmd_fuse_check(args) -> int:
    from .fusion import gradcheck
    from .fusion.training import FusionConfig

    try:
        dims = tuple(int(v) for v in args.dims.split(","))
        if len(dims) != 3:
            raise ValueError
        layers = tuple(int(v) for v in args.layers.split(","))
        FusionConfig(attach_indices=layers)  # validates the indices
    except ValueError:
        print("usage error: --dims needs B,T,C and --layers distinct ints", file=sys.stderr)
        return EXIT_USAGE
    seeds = range(args.seed, args.seed + args.seeds)
    grads = gradcheck.run_gradient_suite(seeds, dims=dims)
    invariants = gradcheck.run_invariant_checks(args.seed)
    passed = grads["max_rel_error"] < 1e-5 and all(invariants.values())
    report = {
        "dims": list(dims),
        "attach_indices": list(layers),
        "seeds": [int(s) for s in seeds],
        "gradient_checks": grads,
        "invariants": invariants,
        "passed": bool(passed),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report == "-":
        print(text)
    else:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.report}")
        print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_NUMERIC


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TEXTSCENE_LOG_LEVEL", "WARNING"))
    args = build_parser().parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "blend": cmd_blend,
        "validate": cmd_validate,
        "ocr-filter": cmd_ocr_filter,
        "eval": cmd_eval,
        "fuse-check": cmd_fuse_check,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
