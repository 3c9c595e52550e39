"""Returning/non-returning classification of call targets.

Library calls resolve through the PLT (dynamic symbols survive stripping)
against a configurable name list.  `error`/`error_at_line` are non-returning
only when the first argument cannot be proven zero.  Local functions get
their status from the disassembly fixpoint; unknown stays "deferred" so the
disassembler can pause at the call site.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from importlib import resources

from .decoder import RDI, Instruction
from .errors import InvalidOpcode, OutOfRange
from .image import BinaryImage

RETURNS = "returns"
NORETURN = "noreturn"
DEFERRED = "deferred"

CONDITIONAL_NAMES = frozenset({"error", "error_at_line"})

EXIT_SYSCALLS = frozenset({60, 231})  # exit, exit_group


def load_noreturn_list(path: str | None = None) -> frozenset[str]:
    """Names from a config file (one per line, '#' comments); default list shipped."""
    if path is None:
        text = resources.files("ehfetch").joinpath("data/noreturn_default.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    names = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.add(line)
    return frozenset(names - CONDITIONAL_NAMES)


@dataclass
class NoReturnDb:
    library_names: frozenset[str]
    conditional_names: frozenset[str] = CONDITIONAL_NAMES
    resolved: dict[int, str] = field(default_factory=dict)  # start -> status

    def status_of(self, start: int) -> str:
        return self.resolved.get(start, "unknown")


def plt_stub_name(img: BinaryImage, addr: int, _decode=None) -> str | None:
    """Resolve a PLT stub address to its dynamic symbol name.

    Decodes the stub looking for `jmp *GOT_SLOT(%rip)` within a few
    instructions and maps the slot through the jump-slot relocations.
    """
    from .decoder import decode_at
    decode = _decode or decode_at
    if not img.in_plt(addr):
        return None
    got_names = img.plt_got_names()
    cur = addr
    for _ in range(4):
        try:
            inst = decode(img, cur)
        except (InvalidOpcode, OutOfRange):
            return None
        if inst.kind == "jump_indirect" and inst.memory is not None \
                and inst.memory.rip_relative:
            return got_names.get(inst.memory.disp)
        if inst.kind in ("jump_direct", "ret", "halt_like"):
            return None
        cur = inst.fallthrough
    return None


def check_error_arg(insts: dict[int, Instruction], call: Instruction) -> str:
    """returns when the first argument provably flows from constant zero."""
    addrs = sorted(insts)
    idx = bisect.bisect_left(addrs, call.addr)
    for i in range(idx - 1, -1, -1):
        inst = insts[addrs[i]]
        if inst.is_terminator:
            return NORETURN
        if RDI in inst.writes:
            if inst.mnemonic == "xor" and inst.dst_reg == RDI and not inst.reads:
                return RETURNS
            if inst.mnemonic == "mov" and inst.dst_reg == RDI \
                    and inst.memory is None and inst.src_reg is None \
                    and inst.immediates and inst.immediates[0][0] == 0:
                return RETURNS
            return NORETURN
    return NORETURN


def classify_call(img: BinaryImage, db: NoReturnDb,
                  insts: dict[int, Instruction], call: Instruction) -> str:
    if call.kind == "call_indirect":
        return RETURNS
    if call.kind != "call_direct" or call.target is None:
        return RETURNS
    target = call.target
    if img.in_plt(target):
        name = plt_stub_name(img, target)
        if name is None:
            return RETURNS  # unknown library callee: coverage-preserving default
        if name in db.library_names:
            return NORETURN
        if name in db.conditional_names:
            return check_error_arg(insts, call)
        return RETURNS
    status = db.status_of(target)
    if status == RETURNS:
        return RETURNS
    if status == NORETURN:
        return NORETURN
    return DEFERRED


def is_exit_syscall(insts: dict[int, Instruction], sysc: Instruction) -> bool:
    """True when `syscall` is reached with a constant exit/exit_group number."""
    addrs = sorted(insts)
    idx = bisect.bisect_left(addrs, sysc.addr)
    for i in range(idx - 1, -1, -1):
        inst = insts[addrs[i]]
        if inst.is_terminator:
            return False
        if 0 in inst.writes:  # rax
            return (inst.mnemonic == "mov" and inst.dst_reg == 0
                    and inst.memory is None and inst.src_reg is None
                    and bool(inst.immediates)
                    and inst.immediates[0][0] in EXIT_SYSCALLS)
    return False
