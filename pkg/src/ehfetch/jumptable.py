"""Jump-table resolution for indirect jumps, via backward slicing.

Only the two shapes compilers emit are resolved: an absolute 8-byte table
(`jmp *TABLE(,%reg,8)`) and a PIC base-relative signed 4-byte table
(`movslq TABLE(%base,%idx,4),%r; add %base,%r; jmp *%r`).  Everything else,
and any jump without a proven index bound, stays unresolved and the caller
stops the disassembly path there.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass

from .decoder import Instruction
from .errors import OutOfRange, SliceEscapesFunction
from .image import BinaryImage

MAX_TABLE_ENTRIES = 4096  # sanity cap; compiler switches never approach this


@dataclass(frozen=True)
class JumpTableResolution:
    jump_addr: int
    base: int
    entry_size: int
    index_register: int
    index_bound: int
    targets: tuple[int, ...]
    entry_kind: str  # "absolute" | "base_relative_signed"
    diagnostics: tuple[str, ...] = ()


def backward_slice(insts: dict[int, Instruction], from_addr: int,
                   seed_regs: set[int]) -> list[Instruction]:
    """Instructions that transitively define seed_regs before from_addr.

    Walks the linear predecessor chain of already-decoded instructions;
    crossing an unconditional control transfer aborts (the linear
    predecessor is then not a real predecessor).
    """
    addrs = sorted(insts)
    idx = bisect.bisect_left(addrs, from_addr)
    live = set(seed_regs)
    out: list[Instruction] = []
    for i in range(idx - 1, -1, -1):
        inst = insts[addrs[i]]
        if inst.is_terminator:
            raise SliceEscapesFunction(
                f"slice at 0x{from_addr:x} crosses terminator at 0x{inst.addr:x}")
        if inst.writes & live:
            out.append(inst)
            live -= inst.writes
            live |= inst.reads
        if not live:
            break
    else:
        if live:
            raise SliceEscapesFunction(
                f"registers {sorted(live)} undefined before 0x{from_addr:x}")
    out.reverse()
    return out


def _find_def(insts: dict[int, Instruction], before: int, reg: int
              ) -> Instruction | None:
    """Nearest linear predecessor writing reg, stopping at terminators."""
    addrs = sorted(insts)
    idx = bisect.bisect_left(addrs, before)
    for i in range(idx - 1, -1, -1):
        inst = insts[addrs[i]]
        if inst.is_terminator:
            return None
        if reg in inst.writes:
            return inst
    return None


def _find_bound(insts: dict[int, Instruction], before: int, idx_reg: int
                ) -> int | None:
    """Exclusive bound on idx_reg from a dominating cmp-imm/jcc or and-imm.

    Forward interval pass over the linear window preceding the table access,
    with value-equivalence classes so a guard on a copy counts: after
    `mov edx,eax`, a `cmp al,4; ja` bounds rdx as well (the sub-register
    alias case), provided both registers carry the same and-mask.
    """
    addrs = sorted(insts)
    idx = bisect.bisect_left(addrs, before)
    lo = idx - 1
    while lo >= 0 and not insts[addrs[lo]].is_terminator:
        lo -= 1
    window = [insts[addrs[i]] for i in range(lo + 1, idx)]

    cls: dict[int, int] = {}  # register -> equivalence class id
    mask: dict[int, int | None] = {}
    bound: dict[int, int] = {}
    next_cls = 0

    def fresh(reg: int) -> None:
        nonlocal next_cls
        cls[reg] = next_cls
        next_cls += 1
        mask[reg] = None
        bound.pop(reg, None)

    pending_cmp: tuple[int, int] | None = None
    for inst in window:
        if pending_cmp is not None and inst.kind == "jump_conditional":
            reg, value = pending_cmp
            if inst.mnemonic == "ja":
                b = value + 1
            elif inst.mnemonic == "jae":
                b = value
            else:
                b = None
            if b is not None:
                for other, c in cls.items():
                    if c == cls.get(reg) and mask.get(other) == mask.get(reg):
                        bound[other] = min(bound.get(other, b), b)
            pending_cmp = None
            continue
        pending_cmp = None
        if inst.mnemonic == "cmp" and inst.dst_reg is not None \
                and inst.immediates and inst.immediates[0][0] >= 0:
            if inst.dst_reg not in cls:
                fresh(inst.dst_reg)
            pending_cmp = (inst.dst_reg, inst.immediates[0][0])
            continue
        if inst.mnemonic in ("mov", "movzx", "movsx") and inst.memory is None \
                and inst.dst_reg is not None and inst.src_reg is not None:
            src = inst.src_reg
            if src not in cls:
                fresh(src)
            src_bound = bound.get(src)
            cls[inst.dst_reg] = cls[src]
            mask[inst.dst_reg] = mask[src]
            if src_bound is None:
                bound.pop(inst.dst_reg, None)
            else:
                bound[inst.dst_reg] = src_bound
            continue
        if inst.mnemonic == "and" and inst.dst_reg is not None \
                and inst.immediates and inst.immediates[0][0] >= 0:
            # masking keeps class membership; the mask itself bounds the value
            if inst.dst_reg not in cls:
                fresh(inst.dst_reg)
            mask[inst.dst_reg] = inst.immediates[0][0]
            continue
        for reg in inst.writes:
            fresh(reg)

    best: int | None = None
    if idx_reg in bound:
        best = bound[idx_reg]
    m = mask.get(idx_reg)
    if m is not None and m + 1 <= MAX_TABLE_ENTRIES:
        best = m + 1 if best is None else min(best, m + 1)
    return best


def resolve_jump_table(img: BinaryImage, insts: dict[int, Instruction],
                       jump: Instruction) -> JumpTableResolution | None:
    if jump.kind != "jump_indirect":
        return None
    try:
        if jump.memory is not None:
            return _resolve_memory_jump(img, insts, jump)
        if jump.src_reg is not None:
            return _resolve_register_jump(img, insts, jump)
    except (SliceEscapesFunction, OutOfRange):
        return None
    return None


def _resolve_memory_jump(img, insts, jump) -> JumpTableResolution | None:
    mem = jump.memory
    if mem.base is not None or mem.index is None or mem.scale != 8:
        return None
    bound = _find_bound(insts, jump.addr, mem.index)
    if bound is None or not 0 < bound <= MAX_TABLE_ENTRIES:
        return None
    return _read_table(img, jump.addr, mem.disp, 8, mem.index, bound,
                       "absolute", base_addr=0)


def _resolve_register_jump(img, insts, jump) -> JumpTableResolution | None:
    d = _find_def(insts, jump.addr, jump.src_reg)
    if d is None:
        return None
    if d.mnemonic == "mov" and d.memory is not None and d.memory.base is None \
            and d.memory.index is not None and d.memory.scale == 8:
        # mov reg, TABLE(,%idx,8); jmp *reg
        bound = _find_bound(insts, d.addr, d.memory.index)
        if bound is None or not 0 < bound <= MAX_TABLE_ENTRIES:
            return None
        return _read_table(img, jump.addr, d.memory.disp, 8, d.memory.index,
                           bound, "absolute", base_addr=0)
    if d.mnemonic == "add" and d.src_reg is not None and d.dst_reg is not None:
        # PIC shape: one addend is the sign-extended table entry, the other
        # the table base loaded with a rip-relative lea.
        for entry_reg, base_reg in ((d.dst_reg, d.src_reg), (d.src_reg, d.dst_reg)):
            load = _find_def(insts, d.addr, entry_reg)
            if load is None or load.mnemonic != "movsx" or load.memory is None:
                continue
            m = load.memory
            if m.index is None or m.scale != 4:
                continue
            if m.base != base_reg:
                continue
            base_def = _find_def(insts, load.addr, base_reg)
            if base_def is None or base_def.mnemonic != "lea" \
                    or base_def.memory is None or not base_def.memory.rip_relative:
                continue
            table = base_def.memory.disp + m.disp
            bound = _find_bound(insts, load.addr, m.index)
            if bound is None or not 0 < bound <= MAX_TABLE_ENTRIES:
                return None
            return _read_table(img, jump.addr, table, 4, m.index, bound,
                               "base_relative_signed",
                               base_addr=base_def.memory.disp)
    return None


def _read_table(img, jump_addr, table, entry_size, idx_reg, bound, kind,
                base_addr) -> JumpTableResolution | None:
    diags = []
    sec = img.section_at(table)
    if sec is None:
        return None
    if sec.writable:
        diags.append(f"jump table at 0x{table:x} lies in writable section {sec.name}")
    try:
        raw = img.read_bytes(table, entry_size * bound)
    except OutOfRange:
        return None
    targets: list[int] = []
    for i in range(bound):
        chunk = raw[i * entry_size : (i + 1) * entry_size]
        if kind == "absolute":
            t = struct.unpack("<Q", chunk)[0]
        else:
            t = (base_addr + struct.unpack("<i", chunk)[0]) & 0xFFFFFFFFFFFFFFFF
        if not img.is_executable_addr(t):
            return None
        if t not in targets:
            targets.append(t)
    return JumpTableResolution(
        jump_addr=jump_addr,
        base=table,
        entry_size=entry_size,
        index_register=idx_reg,
        index_bound=bound,
        targets=tuple(targets),
        entry_kind=kind,
        diagnostics=tuple(diags),
    )
