"""Validated function-pointer scanning.

Candidates come from every overlapping 8-byte word in data sections and in
non-disassembled executable gaps, plus constant operands of decoded code.
Each candidate is validated by speculative recursive disassembly that fails
on the first of four errors: invalid opcode, landing inside a previously
decoded instruction, control transfer into the middle of a known function,
or a calling-convention violation (a register other than the six integer
argument registers read before it is initialized; rsp and rbp are exempt,
and pushing a callee-saved register does not count as a use).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .decoder import ARGUMENT_REGS, RBP, RSP, Instruction, decode_at
from .errors import InvalidOpcode, OutOfRange
from .image import BinaryImage
from .jumptable import resolve_jump_table
from .noreturn import (NORETURN, RETURNS, NoReturnDb, check_error_arg,
                       is_exit_syscall, plt_stub_name)
from .cfg import FunctionSet, in_existing_instruction

EXEMPT_REGS = frozenset(ARGUMENT_REGS | {RSP, RBP})

SPECULATIVE_INSTRUCTION_CAP = 20000


@dataclass
class PointerCandidate:
    value: int
    origin: str  # data_scan | code_constant
    validated: str = "pending"


@dataclass
class SpeculativeScan:
    insts: dict[int, Instruction] = field(default_factory=dict)
    succ: dict[int, list[int]] = field(default_factory=dict)
    reject_reason: str | None = None
    new_constants: list[int] = field(default_factory=list)


def collect_candidates(img: BinaryImage, fs: FunctionSet) -> list[PointerCandidate]:
    values: dict[int, str] = {}

    def consider(value: int, origin: str) -> None:
        if not img.is_executable_addr(value) or img.in_plt(value):
            return
        if value in fs.functions or fs.covered(value):
            return  # already a start, or inside decoded code
        values.setdefault(value, origin)

    for sec in img.sections:
        if not sec.allocated or sec.executable or sec.is_nobits or sec.size < 8:
            continue
        data = img.read_bytes(sec.vaddr, sec.size)
        for off in range(len(data) - 7):
            consider(int.from_bytes(data[off : off + 8], "little"), "data_scan")

    for sec in img.executable_sections():
        data = img.read_bytes(sec.vaddr, sec.size)
        for off in range(len(data) - 7):
            addr = sec.vaddr + off
            # only words lying wholly outside disassembled code
            if fs.covered(addr) or fs.covered(addr + 7):
                continue
            consider(int.from_bytes(data[off : off + 8], "little"), "data_scan")

    for fn in fs.functions.values():
        for inst in fn.insts.values():
            for value, width in inst.immediates:
                if width >= 4:
                    consider(value, "code_constant")
            m = inst.memory
            if m is not None and m.rip_relative:
                consider(m.disp, "code_constant")

    return [PointerCandidate(v, o) for v, o in sorted(values.items())]


def speculative_scan(img: BinaryImage, entry: int, db: NoReturnDb,
                     fs: FunctionSet | None = None) -> SpeculativeScan:
    """Recursive disassembly from entry with the four error checks enabled
    when fs is given; with fs=None it is a plain bounded exploration."""
    out = SpeculativeScan()
    work = [entry]
    visited: set[int] = set()

    def fail(reason: str) -> SpeculativeScan:
        out.reject_reason = reason
        return out

    def check_transfer(t: int) -> str | None:
        if fs is None:
            return None
        if t in fs.functions:
            return "function"  # transfer to a known start is fine
        if fs.covered(t):
            return "mid_function"
        return None

    while work:
        addr = work.pop()
        while True:
            if addr in visited:
                break
            if len(out.insts) > SPECULATIVE_INSTRUCTION_CAP:
                return fail("exploration cap exceeded")
            if fs is not None and in_existing_instruction(fs, addr):
                return fail("mid-instruction")
            if _inside_own(out.insts, addr):
                return fail("mid-instruction")
            visited.add(addr)
            try:
                inst = decode_at(img, addr)
            except (InvalidOpcode, OutOfRange):
                return fail("invalid opcode")
            out.insts[addr] = inst
            for value, width in inst.immediates:
                if width >= 4:
                    out.new_constants.append(value)
            if inst.memory is not None and inst.memory.rip_relative:
                out.new_constants.append(inst.memory.disp)
            kind = inst.kind
            if kind in ("ret", "halt_like"):
                break
            if kind == "syscall":
                if is_exit_syscall(out.insts, inst):
                    break
                out.succ[addr] = [inst.fallthrough]
                addr = inst.fallthrough
                continue
            if kind in ("jump_direct", "jump_conditional"):
                t = inst.target
                disp = check_transfer(t)
                if disp == "mid_function":
                    return fail("transfer into existing function")
                follow = disp is None and img.is_executable_addr(t) \
                    and not img.in_plt(t)
                succs = []
                if kind == "jump_conditional":
                    succs.append(inst.fallthrough)
                if follow:
                    succs.append(t)
                    work.append(t)
                out.succ[addr] = succs
                if kind == "jump_direct":
                    break
                addr = inst.fallthrough
                continue
            if kind == "jump_indirect":
                res = resolve_jump_table(img, out.insts, inst)
                if res is None:
                    break
                out.succ[addr] = list(res.targets)
                work.extend(res.targets)
                break
            if kind == "call_direct":
                t = inst.target
                disp = check_transfer(t)
                if disp == "mid_function":
                    return fail("transfer into existing function")
                status = _call_status(img, db, out.insts, inst, fs)
                if status == NORETURN:
                    break
                out.succ[addr] = [inst.fallthrough]
                addr = inst.fallthrough
                continue
            out.succ[addr] = [inst.fallthrough]
            addr = inst.fallthrough
    return out


def _inside_own(insts: dict[int, Instruction], addr: int) -> bool:
    for back in range(1, 15):
        prev = insts.get(addr - back)
        if prev is not None and prev.length > back:
            return True
    return False


def _call_status(img, db, insts, call, fs) -> str:
    if img.in_plt(call.target):
        name = plt_stub_name(img, call.target)
        if name is None:
            return RETURNS
        if name in db.library_names:
            return NORETURN
        if name in db.conditional_names:
            return check_error_arg(insts, call)
        return RETURNS
    if fs is not None:
        status = fs.statuses.get(call.target)
        if status == NORETURN:
            return NORETURN
    return RETURNS


def must_init_violation(insts: dict[int, Instruction],
                        succ: dict[int, list[int]], entry: int) -> int | None:
    """Forward must-initialized analysis; returns the first violating address.

    Join at branch merges is set intersection, so a register counts as
    initialized only when every path to the instruction defines it.
    """
    states: dict[int, frozenset[int]] = {entry: EXEMPT_REGS}
    work = [entry]
    violation: int | None = None
    while work:
        addr = work.pop()
        inst = insts.get(addr)
        if inst is None:
            continue
        state = states[addr]
        reads = inst.reads
        if inst.kind == "push" and inst.src_reg is not None:
            reads = reads - {inst.src_reg}
        if not reads <= state:
            if violation is None or addr < violation:
                violation = addr
            continue
        out = state | inst.writes
        for t in succ.get(addr, []):
            old = states.get(t)
            new = out if old is None else (old & out)
            if old is None or new != old:
                states[t] = new
                work.append(t)
    return violation


def meets_call_convention(img: BinaryImage, entry: int, db: NoReturnDb,
                          fs: FunctionSet | None = None) -> bool:
    """Decode validity at entry plus the must-init register rule."""
    scan = speculative_scan(img, entry, db, fs=None)
    if scan.reject_reason is not None or not scan.insts:
        return False
    return must_init_violation(scan.insts, scan.succ, entry) is None


def validate_candidate(img: BinaryImage, fs: FunctionSet, db: NoReturnDb,
                       cand: PointerCandidate) -> SpeculativeScan:
    scan = speculative_scan(img, cand.value, db, fs=fs)
    if scan.reject_reason is None:
        bad = must_init_violation(scan.insts, scan.succ, cand.value)
        if bad is not None:
            scan.reject_reason = "calling convention"
    cand.validated = "accepted" if scan.reject_reason is None \
        else f"rejected({scan.reject_reason})"
    return scan
