"""Function-start detection for stripped x86-64 ELF binaries.

Exception-handling frame records are the primary signal; safe recursive
disassembly, validated pointer scanning, and tail-call-aware merging refine
the start set.
"""

from .image import BinaryImage, load_binary
from .ehframe import parse_eh_frame, fde_starts
from .cfi import stack_heights, height_at, INCOMPLETE
from .pipeline import (DetectionReport, DetectionResult, PipelineOptions,
                       emit, evaluate, run_pipeline)

__all__ = [
    "BinaryImage", "load_binary", "parse_eh_frame", "fde_starts",
    "stack_heights", "height_at", "INCOMPLETE",
    "DetectionReport", "DetectionResult", "PipelineOptions",
    "emit", "evaluate", "run_pipeline",
]

__version__ = "0.1.0"
