"""Tail-call detection and merging of split functions.

A direct or conditional jump that leaves its function is either a tail call
(target is a real function: stack height is back to zero, the target has
references beyond jumps from this function, and it satisfies the calling
convention) or evidence that the target is a detached part of the same
function (merge when the jump is the target's only reference).  Jumps whose
FDE gives no complete stack-height information are skipped entirely, so a
split function with frame-pointer-based CFI stays unmerged by design.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cfg import FunctionSet
from .cfi import StackHeightTable
from .decoder import Instruction
from .errors import AddressOutOfFde
from .image import BinaryImage
from .noreturn import NoReturnDb
from .pointers import meets_call_convention


@dataclass(frozen=True)
class Reference:
    kind: str  # call | jump | const | data | jumptable
    owner: int | None  # function start for call/jump/jumptable
    site: int  # instruction or data-word address


@dataclass
class MergeDecision:
    owner: int
    jump_addr: int
    target: int
    verdict: str  # tail_call | merged | skipped
    reason: str


def reference_index(img: BinaryImage, fs: FunctionSet) -> dict[int, set[Reference]]:
    refs: dict[int, set[Reference]] = {}

    def add(target: int, ref: Reference) -> None:
        refs.setdefault(target, set()).add(ref)

    for fn in fs.functions.values():
        for inst in fn.insts.values():
            if inst.kind == "call_direct" and inst.target is not None:
                add(inst.target, Reference("call", fn.start, inst.addr))
            for value, width in inst.immediates:
                if width >= 4 and img.is_executable_addr(value):
                    add(value, Reference("const", fn.start, inst.addr))
            m = inst.memory
            if m is not None and m.rip_relative and img.is_executable_addr(m.disp):
                add(m.disp, Reference("const", fn.start, inst.addr))
        for jump in fn.exit_jumps:
            if jump.target is not None:
                add(jump.target, Reference("jump", fn.start, jump.addr))
        for res in fn.jump_tables.values():
            for t in res.targets:
                add(t, Reference("jumptable", fn.start, res.jump_addr))

    for sec in img.sections:
        if not sec.allocated or sec.executable or sec.is_nobits or sec.size < 8:
            continue
        data = img.read_bytes(sec.vaddr, sec.size)
        for off in range(len(data) - 7):
            value = int.from_bytes(data[off : off + 8], "little")
            if img.is_executable_addr(value):
                add(value, Reference("data", None, sec.vaddr + off))
    return refs


def _height_for(heights: list[StackHeightTable], addr: int):
    """Height at addr from the covering table, or None when uncovered."""
    for table in heights:
        if table.function_start <= addr < table.function_start + table.pc_range:
            try:
                return table.height_at(addr)
            except AddressOutOfFde:
                return None
    return None


def _refs_beyond_own_jumps(refs: dict[int, set[Reference]], target: int,
                           owner: int) -> bool:
    outside = {r for r in refs.get(target, set())
               if not (r.kind in ("jump", "jumptable") and r.owner == owner)}
    return bool(outside)


def detect_and_merge(img: BinaryImage, fs: FunctionSet,
                     heights: list[StackHeightTable],
                     refs: dict[int, set[Reference]],
                     db: NoReturnDb) -> list[MergeDecision]:
    from .cfi import INCOMPLETE

    decisions: list[MergeDecision] = []
    work = sorted(fs.functions)
    pos = 0
    while pos < len(work):
        f_start = work[pos]
        pos += 1
        fn = fs.functions.get(f_start)
        if fn is None:
            continue  # merged away earlier in this pass
        pending = sorted(fn.exit_jumps, key=lambda j: j.addr)
        for jump in pending:
            fn = fs.functions.get(f_start)
            if fn is None or jump not in fn.exit_jumps:
                continue
            target = jump.target
            if target is None or img.in_plt(target):
                continue
            h = _height_for(heights, jump.addr)
            if h is None or h is INCOMPLETE:
                decisions.append(MergeDecision(
                    f_start, jump.addr, target, "skipped", "incomplete CFI"))
                continue
            if h == 0 and _refs_beyond_own_jumps(refs, target, f_start) \
                    and meets_call_convention(img, target, db):
                decisions.append(MergeDecision(
                    f_start, jump.addr, target, "tail_call",
                    "height 0, outside references, calling convention met"))
                fn.exit_jumps.remove(jump)
                continue
            only_ref = refs.get(target, set()) == {
                Reference("jump", f_start, jump.addr)}
            if target in fs.functions and only_ref:
                _merge(fs, refs, f_start, target)
                decisions.append(MergeDecision(
                    f_start, jump.addr, target, "merged",
                    "target's sole reference is this jump"))
                fn.exit_jumps.remove(jump)
                # the absorbed part may itself jump onward; re-check f
                if f_start in work[pos:]:
                    pass
                else:
                    work.append(f_start)
                continue
            decisions.append(MergeDecision(
                f_start, jump.addr, target, "skipped",
                "target not mergeable and tail-call conditions unmet"))
    fs.rebuild_instruction_map()
    return decisions


def _merge(fs: FunctionSet, refs: dict[int, set[Reference]],
           into: int, absorbed: int) -> None:
    f = fs.functions[into]
    t = fs.functions.pop(absorbed)
    fs.statuses.pop(absorbed, None)
    f.insts.update(t.insts)
    f.blocks.update(t.blocks)
    for res_addr, res in t.jump_tables.items():
        f.jump_tables[res_addr] = res
    own_addrs = set(f.insts)
    for jump in t.exit_jumps:
        # jumps from the absorbed part back into the surviving body are
        # now intra-function and drop out of the inventory
        if jump.target not in own_addrs:
            f.exit_jumps.append(jump)
    for target, refset in refs.items():
        updated = {Reference(r.kind, into, r.site)
                   if r.owner == absorbed else r for r in refset}
        refs[target] = updated
    fs.call_graph_edges = {
        (into if a == absorbed else a, b) for a, b in fs.call_graph_edges}


def reject_invalid_fde_starts(img: BinaryImage, starts: list[int],
                              db: NoReturnDb) -> tuple[list[int], list[int]]:
    """Split FDE starts into (kept, removed) by the calling-convention check."""
    kept: list[int] = []
    removed: list[int] = []
    for s in sorted(starts):
        if img.in_plt(s):
            kept.append(s)  # PLT stubs are recorded but never re-validated
            continue
        if img.is_executable_addr(s) and meets_call_convention(img, s, db):
            kept.append(s)
        else:
            removed.append(s)
    return kept, removed
