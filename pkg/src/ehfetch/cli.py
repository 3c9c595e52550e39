"""Command line interface.

detect: run the pipeline and print detected function starts.
eval:   compare detection against a ground-truth address file.
frames: dump parsed FDEs with their stack-height tables.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import sys

from .cfi import INCOMPLETE, stack_heights
from .ehframe import parse_eh_frame
from .errors import EhFetchError
from .image import load_binary
from .pipeline import (DetectionResult, PipelineOptions, emit, evaluate,
                       load_truth_file, plt_exclude_ranges, run_pipeline)

EXIT_OK = 0
EXIT_LOAD_ERROR = 1
EXIT_THRESHOLD = 2


def _options(args) -> PipelineOptions:
    return PipelineOptions(
        pointer_scan=not args.no_pointer_scan,
        tailcall_merge=not args.no_merge,
        noreturn_list=args.noreturn_list,
    )


def _detect_one(path: str, args) -> tuple[str, DetectionResult]:
    return path, run_pipeline(path, _options(args))


def cmd_detect(args) -> int:
    results = []
    try:
        if args.jobs > 1 and len(args.binary) > 1:
            with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
                futures = [pool.submit(_detect_one, p, args) for p in args.binary]
                results = [f.result() for f in futures]
        else:
            results = [_detect_one(p, args) for p in args.binary]
    except (EhFetchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD_ERROR
    for path, result in results:
        if not args.diagnostics:
            result.diagnostics = [d for d in result.diagnostics
                                  if d[0] not in ("info", "warn")]
        sys.stdout.write(emit(result, args.format))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        result = run_pipeline(args.binary, _options(args))
        truth = load_truth_file(args.truth)
    except (EhFetchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD_ERROR
    exclude = plt_exclude_ranges(result.image) if result.image else []
    report = evaluate(result, truth, exclude)
    print(f"binary: {args.binary}")
    print(f"tp: {len(report.true_positives)}  fp: {len(report.false_positives)}"
          f"  fn: {len(report.false_negatives)}")
    print(f"precision: {report.precision:.4f}  recall: {report.recall:.4f}")
    for addr in report.false_positives:
        print(f"fp 0x{addr:x}")
    for addr in report.false_negatives:
        print(f"fn 0x{addr:x}")
    if args.max_fp is not None and len(report.false_positives) > args.max_fp:
        return EXIT_THRESHOLD
    if args.max_fn is not None and len(report.false_negatives) > args.max_fn:
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_frames(args) -> int:
    try:
        img = load_binary(args.binary)
        frames = parse_eh_frame(img)
    except (EhFetchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD_ERROR
    for fde in frames.fdes:
        table = stack_heights(fde.cie, fde)
        print(f"fde +0x{fde.offset_in_section:x}: pc 0x{fde.pc_begin:x}.."
              f"0x{fde.pc_end:x}")
        if table.complete:
            for addr, height in table.entries:
                print(f"  0x{addr:x}: height {height}")
        else:
            print(f"  incomplete: {table.incompleteness_reason}")
    for msg in frames.diagnostics:
        print(f"diagnostic: {msg}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehfetch",
        description="Detect function starts in stripped x86-64 ELF binaries "
                    "from exception-handling frames.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_pipeline_flags(p):
        p.add_argument("--no-pointer-scan", action="store_true")
        p.add_argument("--no-merge", action="store_true")
        p.add_argument("--noreturn-list", metavar="FILE", default=None)

    p = sub.add_parser("detect", help="detect function starts")
    p.add_argument("binary", nargs="+")
    add_pipeline_flags(p)
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--diagnostics", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="compare against ground truth")
    p.add_argument("binary")
    p.add_argument("--truth", required=True)
    add_pipeline_flags(p)
    p.add_argument("--max-fp", type=int, default=None)
    p.add_argument("--max-fn", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("frames", help="dump FDEs and stack heights")
    p.add_argument("binary")
    p.set_defaults(func=cmd_frames)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
