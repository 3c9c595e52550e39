"""Four-stage detection pipeline and evaluation against ground truth.

Stage 1 takes FDE start addresses (dropping starts that fail the
calling-convention check, which catches handwritten off-by-one FDEs),
stage 2 recursively disassembles, stage 3 optionally admits validated
function pointers, and stage 4 resolves inter-function jumps into tail
calls or merges split functions.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

from .cfg import FunctionSet, recursive_disassemble
from .cfi import stack_heights
from .ehframe import fde_starts, parse_eh_frame
from .image import BinaryImage, load_binary
from .noreturn import NoReturnDb, load_noreturn_list
from .pointers import collect_candidates, validate_candidate
from .tailcall import MergeDecision, detect_and_merge, reference_index, \
    reject_invalid_fde_starts


@dataclass
class PipelineOptions:
    pointer_scan: bool = True
    tailcall_merge: bool = True
    noreturn_list: str | None = None


@dataclass
class DetectionResult:
    binary: str
    function_starts: list[tuple[int, str]]  # (address, provenance) ascending
    merged_pairs: list[tuple[int, int]]  # (absorbed, surviving)
    diagnostics: list[tuple[str, str, str]]  # (severity, stage, message)
    timings_ms: dict[str, float]
    decisions: list[MergeDecision] = field(default_factory=list)
    removed_fde_starts: list[int] = field(default_factory=list)
    function_set: FunctionSet | None = None
    image: BinaryImage | None = None


@dataclass
class DetectionReport:
    true_positives: list[int]
    false_positives: list[int]
    false_negatives: list[int]
    precision: float
    recall: float


def run_pipeline(path: str, options: PipelineOptions | None = None
                 ) -> DetectionResult:
    options = options or PipelineOptions()
    diagnostics: list[tuple[str, str, str]] = []
    timings: dict[str, float] = {}
    db = NoReturnDb(library_names=load_noreturn_list(options.noreturn_list))

    t0 = time.monotonic()
    img = load_binary(path)
    frames = parse_eh_frame(img)
    for msg in frames.diagnostics:
        diagnostics.append(("warn", "eh_frame", msg))
    starts = fde_starts(frames.fdes)
    kept, removed = reject_invalid_fde_starts(img, starts, db)
    for s in removed:
        diagnostics.append(
            ("warn", "fde", f"FDE start 0x{s:x} rejected: calling-convention check failed"))
    timings["fde"] = (time.monotonic() - t0) * 1000

    fde_map = {}
    for fde in frames.fdes:
        fde_map.setdefault(fde.pc_begin, fde)
    provenance = {s: "fde" for s in kept}

    t0 = time.monotonic()
    fs = recursive_disassemble(img, kept, db, provenance, fde_map)
    timings["disassembly"] = (time.monotonic() - t0) * 1000

    t0 = time.monotonic()
    if options.pointer_scan:
        fs, provenance = _pointer_fixpoint(img, fs, db, provenance, fde_map,
                                           diagnostics)
    timings["pointer_scan"] = (time.monotonic() - t0) * 1000

    t0 = time.monotonic()
    decisions: list[MergeDecision] = []
    if options.tailcall_merge:
        heights = []
        for fde in frames.fdes:
            if fde.cie.usable:
                heights.append(stack_heights(fde.cie, fde))
        refs = reference_index(img, fs)
        decisions = detect_and_merge(img, fs, heights, refs, db)
        for d in decisions:
            diagnostics.append(("info", "merge",
                                f"0x{d.jump_addr:x} -> 0x{d.target:x}: {d.verdict} ({d.reason})"))
    timings["merge"] = (time.monotonic() - t0) * 1000

    merged_pairs = [(d.target, d.owner) for d in decisions if d.verdict == "merged"]
    for diag in fs.diagnostics:
        diagnostics.append(("info", "disassembly", diag))
    starts_out = sorted((s, fn.provenance) for s, fn in fs.functions.items())
    return DetectionResult(
        binary=path,
        function_starts=starts_out,
        merged_pairs=merged_pairs,
        diagnostics=diagnostics,
        timings_ms=timings,
        decisions=decisions,
        removed_fde_starts=removed,
        function_set=fs,
        image=img,
    )


def _pointer_fixpoint(img, fs, db, provenance, fde_map, diagnostics):
    """Validate pointer candidates; accepted starts re-seed the disassembly
    and the collection repeats until no new start is admitted."""
    rejected: set[int] = set()
    for _ in range(20):
        added = False
        for cand in collect_candidates(img, fs):
            if cand.value in rejected or cand.value in provenance:
                continue
            scan = validate_candidate(img, fs, db, cand)
            if cand.validated == "accepted":
                provenance[cand.value] = "pointer"
                diagnostics.append(("info", "pointer_scan",
                                    f"accepted 0x{cand.value:x} ({cand.origin})"))
                added = True
            else:
                rejected.add(cand.value)
        if not added:
            break
        fs = recursive_disassemble(img, sorted(provenance), db, provenance,
                                   fde_map)
    return fs, provenance


def evaluate(result: DetectionResult, ground_truth: list[int],
             exclude: list[tuple[int, int]] | None = None) -> DetectionReport:
    """Exact-address comparison; addresses in exclude ranges are ignored."""
    exclude = exclude or []

    def keep(addr: int) -> bool:
        return not any(lo <= addr < hi for lo, hi in exclude)

    detected = {a for a, _ in result.function_starts if keep(a)}
    truth = {a for a in ground_truth if keep(a)}
    tp = sorted(detected & truth)
    fp = sorted(detected - truth)
    fn = sorted(truth - detected)
    precision = len(tp) / (len(tp) + len(fp)) if tp or fp else 1.0
    recall = len(tp) / (len(tp) + len(fn)) if tp or fn else 1.0
    return DetectionReport(tp, fp, fn, precision, recall)


def plt_exclude_ranges(img: BinaryImage) -> list[tuple[int, int]]:
    return [(s.vaddr, s.vaddr + s.size) for s in img.plt_sections()]


def emit(result: DetectionResult, format: str = "json") -> str:
    if format == "text":
        return "".join(f"0x{a:x}\n" for a, _ in result.function_starts)
    doc = {
        "binary": result.binary,
        "function_starts": [
            {"addr": f"0x{a:x}", "provenance": p}
            for a, p in result.function_starts
        ],
        "merged": [
            {"from": f"0x{frm:x}", "into": f"0x{into:x}"}
            for frm, into in result.merged_pairs
        ],
        "diagnostics": [
            {"severity": sev, "stage": stage, "message": msg}
            for sev, stage, msg in result.diagnostics
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def parse_emitted(text: str) -> dict:
    return json.loads(text)


def load_truth_file(path: str) -> list[int]:
    """One hex address per line, 0x prefix, '#' comments."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                out.append(int(line, 16))
    return sorted(set(out))
