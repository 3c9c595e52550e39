"""Length-exact decoding of the x86-64 subset that compilers emit.

Each decode returns one Instruction with a control-flow classification,
register read/write sets at 64-bit cell granularity, immediates, and a
resolved memory operand (rip-relative displacements become absolute).
Instructions outside the modeled subset still decode with the correct
length but carry empty read/write sets and kind "other".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

from .errors import InvalidOpcode, OutOfRange
from .image import BinaryImage

RAX, RCX, RDX, RBX, RSP, RBP, RSI, RDI = range(8)
R8, R9, R10, R11, R12, R13, R14, R15 = range(8, 16)

REG_NAMES = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
]

ARGUMENT_REGS = frozenset({RDI, RSI, RDX, RCX, R8, R9})

_LEGACY_PREFIXES = {0x26, 0x2E, 0x36, 0x3E, 0x64, 0x65, 0x66, 0x67, 0xF0, 0xF2, 0xF3}

_CC = ["o", "no", "b", "ae", "e", "ne", "be", "a",
       "s", "ns", "p", "np", "l", "ge", "le", "g"]

_ARITH = {0: "add", 1: "or", 2: "adc", 3: "sbb", 4: "and", 5: "sub", 6: "xor", 7: "cmp"}
_SHIFT = {0: "rol", 1: "ror", 2: "rcl", 3: "rcr", 4: "shl", 5: "shr", 6: "shl", 7: "sar"}


@dataclass(frozen=True)
class MemOperand:
    base: int | None
    index: int | None
    scale: int
    disp: int
    rip_relative: bool = False

    @property
    def regs(self) -> frozenset[int]:
        return frozenset(r for r in (self.base, self.index) if r is not None)


@dataclass(frozen=True)
class Instruction:
    addr: int
    length: int
    kind: str
    mnemonic: str
    target: int | None = None
    reads: frozenset[int] = frozenset()
    writes: frozenset[int] = frozenset()
    immediates: tuple[tuple[int, int], ...] = ()
    memory: MemOperand | None = None
    dst_reg: int | None = None
    src_reg: int | None = None
    operand_size: int = 4

    @property
    def fallthrough(self) -> int:
        return self.addr + self.length

    @property
    def is_terminator(self) -> bool:
        return self.kind in ("jump_direct", "jump_indirect", "ret", "halt_like")


def decode_at(img: BinaryImage, addr: int) -> Instruction:
    sec = img.section_at(addr)
    if sec is None or not sec.executable:
        raise OutOfRange(f"0x{addr:x} not in an executable section")
    avail = min(15, sec.vaddr + sec.size - addr)
    return decode_bytes(img.read_bytes(addr, avail), addr)


def decode_bytes(data: bytes, addr: int) -> Instruction:
    try:
        return _decode(data, addr)
    except (IndexError, struct.error, KeyError):
        raise InvalidOpcode(addr) from None


def _s8(data, pos):
    return struct.unpack_from("<b", data, pos)[0]


def _s32(data, pos):
    return struct.unpack_from("<i", data, pos)[0]


def _modrm(data, pos, rex):
    byte = data[pos]
    pos += 1
    mod = byte >> 6
    regop = ((byte >> 3) & 7) | (8 if rex & 4 else 0)
    rm = byte & 7
    if mod == 3:
        return mod, regop, rm | (8 if rex & 1 else 0), None, pos
    base = index = None
    scale = 1
    disp = 0
    rip = False
    if rm == 4:
        sib = data[pos]
        pos += 1
        scale = 1 << (sib >> 6)
        idx = ((sib >> 3) & 7) | (8 if rex & 2 else 0)
        if idx != 4:  # index 100 with no REX.X means "no index"
            index = idx
        if (sib & 7) == 5 and mod == 0:
            disp = _s32(data, pos)
            pos += 4
        else:
            base = (sib & 7) | (8 if rex & 1 else 0)
    elif rm == 5 and mod == 0:
        disp = _s32(data, pos)
        pos += 4
        rip = True
    else:
        base = rm | (8 if rex & 1 else 0)
    if mod == 1:
        disp += _s8(data, pos)
        pos += 1
    elif mod == 2:
        disp += _s32(data, pos)
        pos += 4
    return mod, regop, None, MemOperand(base, index, scale, disp, rip), pos


# 0F-map opcodes that take a ModRM byte and no immediate.  Covers the SSE/SSE2
# data-movement and arithmetic range plus the scattered bit/extend opcodes.
_0F_MODRM = set(range(0x10, 0x18)) | set(range(0x18, 0x20)) | set(range(0x28, 0x30))
_0F_MODRM |= set(range(0x40, 0x70)) | set(range(0x74, 0x77)) | set(range(0x7C, 0x80))
_0F_MODRM |= set(range(0x90, 0xA0)) | {0xA3, 0xAB, 0xAE, 0xAF, 0xB0, 0xB1, 0xB3}
_0F_MODRM |= {0xB6, 0xB7, 0xB8, 0xBB, 0xBC, 0xBD, 0xBE, 0xBF, 0xC0, 0xC1, 0xC3, 0xC7}
_0F_MODRM |= set(range(0xD0, 0xFF))
_0F_MODRM_IMM8 = {0x70, 0x71, 0x72, 0x73, 0xA4, 0xAC, 0xBA, 0xC2, 0xC4, 0xC5, 0xC6}
_0F_NOARG = {0x05, 0x0B, 0x31, 0x77, 0xA2}


def _decode(data: bytes, addr: int) -> Instruction:
    pos = 0
    rex = 0
    opsize16 = False
    rep = False
    while pos < len(data):
        byte = data[pos]
        if byte in _LEGACY_PREFIXES:
            if byte == 0x66:
                opsize16 = True
            if byte in (0xF2, 0xF3):
                rep = True
            rex = 0
            pos += 1
        elif 0x40 <= byte <= 0x4F:
            rex = byte
            pos += 1
        else:
            break
    else:
        raise InvalidOpcode(addr)
    if pos >= 15:
        raise InvalidOpcode(addr)

    osize = 8 if rex & 8 else (2 if opsize16 else 4)
    op = data[pos]
    pos += 1

    mnemonic = "other"
    kind = "other"
    target = None
    reads: set[int] = set()
    writes: set[int] = set()
    imms: list[tuple[int, int]] = []
    mem: MemOperand | None = None
    dst_reg = src_reg = None

    def addr_reads(m):
        if m is not None:
            reads.update(m.regs)

    def imm(width, signed=True):
        nonlocal pos
        chunk = data[pos : pos + width]
        if len(chunk) < width:
            raise InvalidOpcode(addr)
        value = int.from_bytes(chunk, "little", signed=signed)
        pos += width
        imms.append((value, width))
        return value

    if op == 0x0F:
        op2 = data[pos]
        pos += 1
        if op2 == 0x05:
            mnemonic, kind = "syscall", "syscall"
            reads.add(RAX)
            writes.update({RAX, RCX, R11})
        elif op2 == 0x0B:
            mnemonic, kind = "ud2", "halt_like"
        elif op2 in _0F_NOARG:
            mnemonic = "misc"
            if op2 == 0x31:
                writes.update({RAX, RDX})
            elif op2 == 0xA2:
                reads.add(RAX)
                writes.update({RAX, RBX, RCX, RDX})
        elif 0x80 <= op2 <= 0x8F:
            rel = imm(4)
            imms.clear()
            mnemonic = "j" + _CC[op2 & 0xF]
            kind = "jump_conditional"
            target = None  # fixed below once length known
            rel_pending = rel
        elif 0xC8 <= op2 <= 0xCF:
            mnemonic = "bswap"
            dst_reg = (op2 & 7) | (8 if rex & 1 else 0)
            reads.add(dst_reg)
            writes.add(dst_reg)
        elif op2 == 0x1E and rep:
            # endbr64/endbr32 encode the "target" in the modrm position
            _, _, _, m, pos = _modrm(data, pos, rex)
            mnemonic = "endbr"
        elif op2 == 0x38:
            op3 = data[pos]
            pos += 1
            mod, regop, rm, mem, pos = _modrm(data, pos, rex)
            addr_reads(mem)
            mnemonic = "sse"
        elif op2 == 0x3A:
            op3 = data[pos]
            pos += 1
            mod, regop, rm, mem, pos = _modrm(data, pos, rex)
            addr_reads(mem)
            imm(1)
            imms.clear()
            mnemonic = "sse"
        elif op2 in _0F_MODRM or op2 in _0F_MODRM_IMM8:
            mod, regop, rm, mem, pos = _modrm(data, pos, rex)
            addr_reads(mem)
            if op2 in _0F_MODRM_IMM8:
                imm(1)
                imms.clear()
            if 0x40 <= op2 <= 0x4F:
                mnemonic, kind = "cmov" + _CC[op2 & 0xF], "move"
                dst_reg = regop
                reads.add(regop)
                if rm is not None:
                    reads.add(rm)
                    src_reg = rm
                writes.add(regop)
            elif 0x90 <= op2 <= 0x9F:
                mnemonic = "set" + _CC[op2 & 0xF]
                if rm is not None:
                    writes.add(rm)
                    dst_reg = rm
            elif op2 in (0xB6, 0xB7, 0xBE, 0xBF):
                mnemonic = "movzx" if op2 < 0xBE else "movsx"
                kind = "move"
                dst_reg = regop
                writes.add(regop)
                if rm is not None:
                    reads.add(rm)
                    src_reg = rm
            elif op2 == 0xAF:
                mnemonic = "imul"
                dst_reg = regop
                reads.add(regop)
                writes.add(regop)
                if rm is not None:
                    reads.add(rm)
                    src_reg = rm
            elif op2 in (0xB8, 0xBC, 0xBD):  # popcnt/tzcnt/bsf/bsr/lzcnt
                mnemonic = "bitscan"
                dst_reg = regop
                writes.add(regop)
                if rm is not None:
                    reads.add(rm)
            elif op2 == 0xA3:
                mnemonic = "bt"
                reads.add(regop)
                if rm is not None:
                    reads.add(rm)
            elif op2 in (0xAB, 0xB3, 0xBB):
                mnemonic = "btx"
                reads.add(regop)
                if rm is not None:
                    reads.add(rm)
                    writes.add(rm)
            elif op2 in (0xB0, 0xB1):
                mnemonic = "cmpxchg"
                reads.update({RAX, regop})
                writes.add(RAX)
                if rm is not None:
                    reads.add(rm)
                    writes.add(rm)
            elif op2 in (0xC0, 0xC1):
                mnemonic = "xadd"
                reads.add(regop)
                writes.add(regop)
                if rm is not None:
                    reads.add(rm)
                    writes.add(rm)
            elif op2 == 0xBA:
                mnemonic = "bt"
                if rm is not None:
                    reads.add(rm)
            elif op2 in (0x2C, 0x2D):  # cvtt*2si r, xmm
                mnemonic = "cvt"
                dst_reg = regop
                writes.add(regop)
            elif op2 == 0x2A:  # cvtsi2* xmm, r/m
                mnemonic = "cvt"
                if rm is not None:
                    reads.add(rm)
            elif op2 == 0x6E:  # movd/movq xmm, r/m
                mnemonic = "movd"
                if rm is not None:
                    reads.add(rm)
            elif op2 == 0x7E and opsize16:  # movd/movq r/m, xmm
                mnemonic = "movd"
                if rm is not None:
                    writes.add(rm)
            elif op2 == 0xC7:  # cmpxchg8b/16b group
                mnemonic = "cmpxchg"
                reads.update({RAX, RDX, RBX, RCX})
                writes.update({RAX, RDX})
            else:
                mnemonic = "sse"
        else:
            raise InvalidOpcode(addr)
        length = pos
        if kind == "jump_conditional":
            target = (addr + length + rel_pending) & 0xFFFFFFFFFFFFFFFF
        return _fix(Instruction(addr, length, kind, mnemonic, target,
                                frozenset(reads), frozenset(writes), tuple(imms),
                                mem, dst_reg, src_reg, osize), addr)

    if op < 0x40 and (op & 7) < 6:
        fam = _ARITH[op >> 3]
        variant = op & 7
        mnemonic = fam
        if variant in (0, 1, 2, 3):
            mod, regop, rm, mem, pos = _modrm(data, pos, rex)
            addr_reads(mem)
            reg_is_dst = variant in (2, 3)
            if reg_is_dst:
                dst_reg, other = regop, rm
            else:
                dst_reg, other = rm, regop  # dst_reg None when rm is memory
            if other is not None:
                reads.add(other)
                src_reg = other
            if fam == "xor" and dst_reg is not None and dst_reg == other:
                # xor reg,reg zeroing idiom: definition, not a use
                reads.discard(other)
            elif dst_reg is not None and fam not in ("cmp",):
                reads.add(dst_reg)
            elif dst_reg is not None:
                reads.add(dst_reg)
            if fam != "cmp" and dst_reg is not None:
                writes.add(dst_reg)
            if fam == "cmp" and dst_reg is not None:
                pass  # cmp only reads
            if fam == "cmp":
                writes.clear()
        else:
            width = 1 if variant == 4 else (2 if opsize16 else 4)
            imm(width)
            dst_reg = RAX
            reads.add(RAX)
            if fam != "cmp":
                writes.add(RAX)
        if op & 7 in (0, 2, 4):
            osize = 1
    elif 0x50 <= op <= 0x57:
        mnemonic, kind = "push", "push"
        src_reg = (op & 7) | (8 if rex & 1 else 0)
        reads.update({src_reg, RSP})
        writes.add(RSP)
        osize = 8
    elif 0x58 <= op <= 0x5F:
        mnemonic, kind = "pop", "pop"
        dst_reg = (op & 7) | (8 if rex & 1 else 0)
        reads.add(RSP)
        writes.update({dst_reg, RSP})
        osize = 8
    elif op == 0x63:  # movsxd
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic, kind = "movsx", "move"
        dst_reg = regop
        writes.add(regop)
        if rm is not None:
            reads.add(rm)
            src_reg = rm
    elif op == 0x68:
        mnemonic, kind = "push", "push"
        imm(2 if opsize16 else 4)
        reads.add(RSP)
        writes.add(RSP)
    elif op == 0x6A:
        mnemonic, kind = "push", "push"
        imm(1)
        reads.add(RSP)
        writes.add(RSP)
    elif op in (0x69, 0x6B):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        imm(1 if op == 0x6B else (2 if opsize16 else 4))
        mnemonic = "imul"
        dst_reg = regop
        writes.add(regop)
        if rm is not None:
            reads.add(rm)
            src_reg = rm
    elif 0x70 <= op <= 0x7F:
        rel = imm(1)
        imms.clear()
        mnemonic = "j" + _CC[op & 0xF]
        kind = "jump_conditional"
        target = "rel", rel
    elif op in (0x80, 0x81, 0x83):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        imm(1 if op != 0x81 else (2 if opsize16 else 4))
        mnemonic = _ARITH[regop & 7]
        dst_reg = rm
        if rm is not None:
            reads.add(rm)
            if mnemonic != "cmp":
                writes.add(rm)
        if op == 0x80:
            osize = 1
        if mnemonic == "sub" and rm == RSP:
            kind = "sub_rsp"
    elif op in (0x84, 0x85):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic = "test"
        reads.add(regop)
        if rm is not None:
            reads.add(rm)
        if op == 0x84:
            osize = 1
    elif op in (0x86, 0x87):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic = "xchg"
        reads.add(regop)
        writes.add(regop)
        if rm is not None:
            reads.add(rm)
            writes.add(rm)
    elif op in (0x88, 0x89, 0x8A, 0x8B):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic, kind = "mov", "move"
        if op in (0x88, 0x89):  # store / reg-to-rm
            src_reg = regop
            reads.add(regop)
            if rm is not None:
                dst_reg = rm
                writes.add(rm)
        else:
            dst_reg = regop
            writes.add(regop)
            if rm is not None:
                src_reg = rm
                reads.add(rm)
        if op in (0x88, 0x8A):
            osize = 1
    elif op == 0x8D:
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic, kind = "lea", "move"
        dst_reg = regop
        writes.add(regop)
    elif op == 0x8F:
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic, kind = "pop", "pop"
        reads.add(RSP)
        writes.add(RSP)
        if rm is not None:
            dst_reg = rm
            writes.add(rm)
    elif op == 0x90:
        mnemonic = "xchg" if rex & 1 else "nop"
        if rex & 1:
            reads.update({RAX, R8})
            writes.update({RAX, R8})
    elif 0x91 <= op <= 0x97:
        mnemonic = "xchg"
        other = (op & 7) | (8 if rex & 1 else 0)
        reads.update({RAX, other})
        writes.update({RAX, other})
    elif op == 0x98:  # cwde/cdqe
        mnemonic = "cdqe"
        reads.add(RAX)
        writes.add(RAX)
    elif op == 0x99:  # cdq/cqo
        mnemonic = "cqo"
        reads.add(RAX)
        writes.add(RDX)
    elif op in (0x9C, 0x9D):  # pushf/popf
        mnemonic = "pushf" if op == 0x9C else "popf"
        reads.add(RSP)
        writes.add(RSP)
    elif op in (0xA8, 0xA9):
        mnemonic = "test"
        imm(1 if op == 0xA8 else (2 if opsize16 else 4))
        reads.add(RAX)
    elif op in (0xA4, 0xA5, 0xAA, 0xAB, 0xAC, 0xAD, 0xAE, 0xAF):
        mnemonic = "string"
        reads.update({RSI, RDI, RCX, RAX})
        writes.update({RSI, RDI, RCX})
        if op in (0xAC, 0xAD):
            writes.add(RAX)
    elif 0xB0 <= op <= 0xB7:
        mnemonic, kind = "mov", "move"
        imm(1, signed=False)
        dst_reg = (op & 7) | (8 if rex & 1 else 0)
        writes.add(dst_reg)
        osize = 1
    elif 0xB8 <= op <= 0xBF:
        mnemonic, kind = "mov", "move"
        width = 8 if rex & 8 else (2 if opsize16 else 4)
        imm(width, signed=False)
        dst_reg = (op & 7) | (8 if rex & 1 else 0)
        writes.add(dst_reg)
    elif op in (0xC0, 0xC1):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        imm(1, signed=False)
        mnemonic = _SHIFT[regop & 7]
        dst_reg = rm
        if rm is not None:
            reads.add(rm)
            writes.add(rm)
        if op == 0xC0:
            osize = 1
    elif op == 0xC2:
        mnemonic, kind = "ret", "ret"
        imm(2, signed=False)
        imms.clear()
        reads.add(RSP)
        writes.add(RSP)
    elif op == 0xC3:
        mnemonic, kind = "ret", "ret"
        reads.add(RSP)
        writes.add(RSP)
    elif op in (0xC6, 0xC7):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        imm(1 if op == 0xC6 else (2 if opsize16 else 4))
        mnemonic, kind = "mov", "move"
        if rm is not None:
            dst_reg = rm
            writes.add(rm)
        if op == 0xC6:
            osize = 1
    elif op == 0xC9:
        mnemonic = "leave"
        reads.add(RBP)
        writes.update({RSP, RBP})
    elif op == 0xCC:
        mnemonic, kind = "int3", "halt_like"
    elif op == 0xCD:
        imm(1, signed=False)
        imms.clear()
        mnemonic, kind = "int", "halt_like"
    elif 0xD8 <= op <= 0xDF:
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic = "x87"
    elif 0xD0 <= op <= 0xD3:
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic = _SHIFT[regop & 7]
        dst_reg = rm
        if rm is not None:
            reads.add(rm)
            writes.add(rm)
        if op in (0xD2, 0xD3):
            reads.add(RCX)
        if op in (0xD0, 0xD2):
            osize = 1
    elif op == 0xE8:
        rel = imm(4)
        imms.clear()
        mnemonic, kind = "call", "call_direct"
        target = "rel", rel
        reads.add(RSP)
        writes.update({RSP, RAX, RDX})
    elif op == 0xE9:
        rel = imm(4)
        imms.clear()
        mnemonic, kind = "jmp", "jump_direct"
        target = "rel", rel
    elif op == 0xEB:
        rel = imm(1)
        imms.clear()
        mnemonic, kind = "jmp", "jump_direct"
        target = "rel", rel
    elif op == 0xF4:
        mnemonic, kind = "hlt", "halt_like"
    elif op in (0xF5, 0xF8, 0xF9, 0xFA, 0xFB, 0xFC, 0xFD):
        mnemonic = "flags"
    elif op in (0xF6, 0xF7):
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        sel = regop & 7
        if sel in (0, 1):
            imm(1 if op == 0xF6 else (2 if opsize16 else 4))
            mnemonic = "test"
            if rm is not None:
                reads.add(rm)
        elif sel in (2, 3):
            mnemonic = "not" if sel == 2 else "neg"
            dst_reg = rm
            if rm is not None:
                reads.add(rm)
                writes.add(rm)
        else:
            mnemonic = {4: "mul", 5: "imul", 6: "div", 7: "idiv"}[sel]
            reads.add(RAX)
            if sel in (6, 7):
                reads.add(RDX)
            if rm is not None:
                reads.add(rm)
            writes.update({RAX, RDX})
        if op == 0xF6:
            osize = 1
    elif op == 0xFE:
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        mnemonic = "inc" if (regop & 7) == 0 else "dec"
        dst_reg = rm
        if rm is not None:
            reads.add(rm)
            writes.add(rm)
        osize = 1
    elif op == 0xFF:
        mod, regop, rm, mem, pos = _modrm(data, pos, rex)
        addr_reads(mem)
        sel = regop & 7
        if sel in (0, 1):
            mnemonic = "inc" if sel == 0 else "dec"
            dst_reg = rm
            if rm is not None:
                reads.add(rm)
                writes.add(rm)
        elif sel == 2:
            mnemonic, kind = "call", "call_indirect"
            if rm is not None:
                reads.add(rm)
                src_reg = rm
            reads.add(RSP)
            writes.update({RSP, RAX, RDX})
        elif sel == 4:
            mnemonic, kind = "jmp", "jump_indirect"
            if rm is not None:
                reads.add(rm)
                src_reg = rm
        elif sel == 6:
            mnemonic, kind = "push", "push"
            if rm is not None:
                reads.add(rm)
                src_reg = rm
            reads.add(RSP)
            writes.add(RSP)
        else:
            raise InvalidOpcode(addr)
    else:
        raise InvalidOpcode(addr)

    length = pos
    if length > 15:
        raise InvalidOpcode(addr)
    if isinstance(target, tuple):
        target = (addr + length + target[1]) & 0xFFFFFFFFFFFFFFFF
    return _fix(Instruction(addr, length, kind, mnemonic, target,
                            frozenset(reads), frozenset(writes), tuple(imms),
                            mem, dst_reg, src_reg, osize), addr)


def _fix(inst: Instruction, addr: int) -> Instruction:
    """Resolve rip-relative displacements now that the length is known."""
    m = inst.memory
    if m is not None and m.rip_relative:
        resolved = (inst.addr + inst.length + m.disp) & 0xFFFFFFFFFFFFFFFF
        inst = replace(inst, memory=replace(m, disp=resolved))
    return inst
