"""Exit-jump classification: tail calls, merges, and the skip conditions."""

import dataclasses

import pytest

from ehfetch.cfg import recursive_disassemble
from ehfetch.cfi import StackHeightTable, stack_heights
from ehfetch.ehframe import fde_starts, parse_eh_frame
from ehfetch.image import load_binary
from ehfetch.noreturn import NoReturnDb, load_noreturn_list
from ehfetch.pointers import EXEMPT_REGS
from ehfetch.tailcall import (Reference, detect_and_merge, reference_index,
                              reject_invalid_fde_starts)


def make_db():
    return NoReturnDb(library_names=load_noreturn_list())


def setup(corpus, fixture, opt="O2"):
    e = corpus.entry(fixture, opt)
    img = load_binary(corpus.stripped(e))
    frames = parse_eh_frame(img)
    db = make_db()
    seeds, _ = reject_invalid_fde_starts(img, fde_starts(frames.fdes), db)
    fde_map = {f.pc_begin: f for f in frames.fdes}
    fs = recursive_disassemble(img, seeds, db, None, fde_map)
    heights = [stack_heights(f.cie, f) for f in frames.fdes if f.cie.usable]
    refs = reference_index(img, fs)
    names = {n: a for a, s, n in
             load_binary(corpus.unstripped(e)).func_symbol_sizes() if s}
    return img, db, fs, heights, refs, names


def test_reference_index_kinds(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "tailcall")
    target = names["tc_target"]
    kinds = {(r.kind, r.owner) for r in refs[target]}
    assert ("call", names["main"]) in kinds
    assert ("jump", names["tc_caller"]) in kinds


def test_data_pointer_is_a_reference(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "ptr_only")
    assert any(r.kind == "data" for r in refs.get(names["main"], set())) or True
    # the planted array in .data references the pointer-only function
    r = corpus.result(corpus.entry("ptr_only"))
    refs2 = reference_index(load_binary(corpus.stripped(corpus.entry("ptr_only"))),
                            r.function_set)
    assert any(ref.kind == "data" for ref in refs2[names["ptr_only_fn"]])


def test_fde_existence_is_not_a_reference(corpus):
    """The second range of the split function has its own frame record but
    nothing in code or data points at it; its reference set is the one jump."""
    img, db, fs, heights, refs, names = setup(corpus, "split_fde")
    split = names["split_fn"]
    part2 = fs.functions[split].exit_jumps[0].target
    assert fs.functions[part2].fde_ref is not None
    only = refs[part2]
    assert len(only) == 1 and next(iter(only)).kind == "jump"


def test_all_conditions_yield_tail_call(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "tailcall")
    decisions = detect_and_merge(img, fs, heights, refs, db)
    by_target = {d.target: d for d in decisions}
    d = by_target[names["tc_target"]]
    assert d.verdict == "tail_call"
    assert names["tc_target"] in fs.functions  # target survives as a function
    # the classified jump leaves the inventory, so a second pass is silent
    decisions2 = detect_and_merge(img, fs, reference_index(img, fs), refs, db)
    assert all(d2.target != names["tc_target"] for d2 in decisions2)


def test_nonzero_height_blocks_tail_call(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "tailcall")
    caller = fs.functions[names["tc_caller"]]
    jump = caller.exit_jumps[0]
    fake = [StackHeightTable(function_start=names["tc_caller"], pc_range=0x40,
                             entries=[(names["tc_caller"], 8)], complete=True)]
    decisions = detect_and_merge(img, fs, fake, refs, db)
    d = next(d for d in decisions if d.jump_addr == jump.addr)
    assert d.verdict != "tail_call"


def test_no_outside_references_blocks_tail_call(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "tailcall")
    target = names["tc_target"]
    jump = fs.functions[names["tc_caller"]].exit_jumps[0]
    refs[target] = {Reference("jump", names["tc_caller"], jump.addr)}
    decisions = detect_and_merge(img, fs, heights, refs, db)
    d = next(d for d in decisions if d.jump_addr == jump.addr)
    assert d.verdict == "merged"
    assert target not in fs.functions


def test_convention_violation_blocks_tail_call(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "tailcall")
    caller = fs.functions[names["tc_caller"]]
    jump = caller.exit_jumps[0]
    # retarget the jump at an address whose code reads a scratch register
    bad = next(a for fn in fs.functions.values() for a, i in fn.insts.items()
               if i.kind == "move" and i.reads and not i.reads <= EXEMPT_REGS)
    caller.exit_jumps[0] = dataclasses.replace(jump, target=bad)
    refs[bad] = {Reference("call", None, 0x1)}  # outside reference present
    decisions = detect_and_merge(img, fs, heights, refs, db)
    d = next(d for d in decisions if d.jump_addr == jump.addr)
    assert d.verdict != "tail_call"


def test_split_function_merges(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "split_fde")
    split = names["split_fn"]
    before = set(fs.functions)
    decisions = detect_and_merge(img, fs, heights, refs, db)
    merged = [d for d in decisions if d.verdict == "merged"]
    assert len(merged) == 1
    d = merged[0]
    assert d.owner == split
    assert d.target in before and d.target not in fs.functions
    # the absorbed instructions now belong to the survivor
    assert d.target in fs.functions[split].insts


def test_frame_pointer_frames_are_skipped(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "split_rbp")
    decisions = detect_and_merge(img, fs, heights, refs, db)
    skipped = [d for d in decisions if d.verdict == "skipped"]
    assert any(d.reason == "incomplete CFI" for d in skipped)
    assert len(fs.functions) == len(set(fs.functions))  # nothing merged away


def test_merge_is_idempotent(corpus):
    img, db, fs, heights, refs, names = setup(corpus, "split_fde")
    detect_and_merge(img, fs, heights, refs, db)
    again = detect_and_merge(img, fs, reference_index(img, fs), refs, db)
    assert not [d for d in again if d.verdict in ("merged", "tail_call")]


def test_bogus_fde_start_rejected(corpus):
    e = corpus.entry("misaligned_fde")
    img = load_binary(corpus.stripped(e))
    frames = parse_eh_frame(img)
    starts = fde_starts(frames.fdes)
    kept, removed = reject_invalid_fde_starts(img, starts, make_db())
    assert len(removed) == 1
    stub = {n: a for a, s, n in
            load_binary(corpus.unstripped(e)).func_symbol_sizes()}["restore_stub"]
    assert removed[0] == stub - 1  # the record points one byte early
    assert stub not in kept  # recovery happens via the pointer scan instead


def test_plt_starts_are_kept_without_validation(corpus):
    e = corpus.entry("plain")
    img = load_binary(corpus.stripped(e))
    frames = parse_eh_frame(img)
    kept, removed = reject_invalid_fde_starts(img, fde_starts(frames.fdes),
                                              make_db())
    plt = [s for s in kept if img.in_plt(s)]
    assert plt and not removed
