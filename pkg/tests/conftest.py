"""Shared fixtures: prebuilt corpus access and cached pipeline runs."""

import json
import pathlib

import pytest

from ehfetch import run_pipeline
from ehfetch.pipeline import PipelineOptions, load_truth_file, plt_exclude_ranges

ROOT = pathlib.Path(__file__).resolve().parent.parent
PREBUILT = ROOT / "corpus" / "prebuilt"
ORACLES = pathlib.Path(__file__).resolve().parent / "oracles"

# Fixtures built purely from C sources (the hand-written assembly ones
# exercise deliberately unusual frame layouts and are excluded from the
# frame-coverage equality checks).
C_ONLY = {"plain", "switch", "switch_abs", "noreturn_chain", "error_calls",
          "tailcall"}


def load_manifest():
    path = PREBUILT / "manifest.json"
    if not path.exists():
        pytest.skip("prebuilt corpus snapshot missing", allow_module_level=True)
    return json.loads(path.read_text())


@pytest.fixture(scope="session")
def manifest():
    return load_manifest()


@pytest.fixture(scope="session")
def corpus(manifest):
    return CorpusAccess(manifest)


class CorpusAccess:
    def __init__(self, manifest):
        self.manifest = manifest
        self._results = {}

    def entries(self, fixture=None):
        return [e for e in self.manifest
                if fixture is None or e["fixture"] == fixture]

    def entry(self, fixture, opt="O2"):
        for e in self.manifest:
            if e["fixture"] == fixture and e["opt"] == opt:
                return e
        raise KeyError(f"{fixture} {opt}")

    def stripped(self, entry):
        return str(PREBUILT / entry["stripped"])

    def unstripped(self, entry):
        return str(PREBUILT / entry["unstripped"])

    def truth_path(self, entry):
        return str(PREBUILT / entry["truth"])

    def truth(self, entry):
        return load_truth_file(self.truth_path(entry))

    def result(self, entry, **options):
        key = (entry["stripped"], tuple(sorted(options.items())))
        if key not in self._results:
            self._results[key] = run_pipeline(
                self.stripped(entry), PipelineOptions(**options))
        return self._results[key]

    def report_sets(self, entry, **options):
        """(detected, truth) address sets with PLT stubs removed from both."""
        r = self.result(entry, **options)
        exclude = plt_exclude_ranges(r.image)

        def keep(a):
            return not any(lo <= a < hi for lo, hi in exclude)

        detected = {a for a, _ in r.function_starts if keep(a)}
        truth = {a for a in self.truth(entry) if keep(a)}
        return detected, truth


@pytest.fixture(scope="session")
def frame_rows():
    return json.loads((ORACLES / "frame_rows.json").read_text())


@pytest.fixture(scope="session")
def insn_bounds():
    return json.loads((ORACLES / "insn_bounds.json").read_text())
