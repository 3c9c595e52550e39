"""Call-frame instruction evaluation: per-address stack heights.

Height is defined as (CFA offset from rsp) - 8, so height 0 means rsp points
immediately below the return address.  A table is only marked complete when
every CFA rule in the FDE stays of the form rsp + K with K >= 8.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .ehframe import Cie, Fde, PointerEncoding, read_encoded
from .errors import AddressOutOfFde, CfiDecodeError
from .leb128 import read_sleb128, read_uleb128

DWARF_RSP = 7
DWARF_RBP = 6

INCOMPLETE = object()  # sentinel returned by height_at for incomplete tables


@dataclass(frozen=True)
class CfiInstruction:
    opcode: str
    operands: tuple[int, ...] = ()
    raw: bytes = b""


@dataclass
class StackHeightTable:
    function_start: int
    pc_range: int
    entries: list[tuple[int, int]]
    complete: bool
    incompleteness_reason: str | None = None
    _addrs: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        self._addrs = [a for a, _ in self.entries]

    def height_at(self, addr: int):
        if not self.function_start <= addr < self.function_start + self.pc_range:
            raise AddressOutOfFde(f"0x{addr:x} outside FDE")
        if not self.complete:
            return INCOMPLETE
        idx = bisect.bisect_right(self._addrs, addr) - 1
        if idx < 0:
            return INCOMPLETE
        return self.entries[idx][1]


def height_at(table: StackHeightTable, addr: int):
    return table.height_at(addr)


def decode_cfi(cie: Cie, fde: Fde) -> list[CfiInstruction]:
    """CIE initial instructions followed by the FDE's own instruction stream."""
    out = _decode_stream(cie, fde, cie.initial_cfi_bytes)
    out.extend(_decode_stream(cie, fde, fde.cfi_bytes))
    return out


def _decode_stream(cie: Cie, fde: Fde, data: bytes) -> list[CfiInstruction]:
    out: list[CfiInstruction] = []
    pos = 0
    try:
        while pos < len(data):
            start = pos
            byte = data[pos]
            pos += 1
            high, low = byte >> 6, byte & 0x3F
            if high == 1:
                out.append(CfiInstruction("advance_loc", (low * cie.code_align,)))
            elif high == 2:
                off, pos = read_uleb128(data, pos)
                out.append(CfiInstruction("offset", (low, off * cie.data_align)))
            elif high == 3:
                out.append(CfiInstruction("restore", (low,)))
            else:
                inst, pos = _decode_extended(cie, fde, data, pos, low, start)
                out.append(inst)
    except (ValueError, IndexError) as exc:
        raise CfiDecodeError(pos) from exc
    return out


def _decode_extended(cie: Cie, fde: Fde, data: bytes, pos: int, low: int,
                     start: int) -> tuple[CfiInstruction, int]:
    if low == 0x00:
        return CfiInstruction("nop"), pos
    if low == 0x01:  # set_loc: address per the CIE's pointer encoding
        addr, pos = read_encoded(data, pos, fde.cie.fde_pointer_encoding, 0)
        return CfiInstruction("set_loc", (addr,)), pos
    if low == 0x02:
        delta = data[pos]
        return CfiInstruction("advance_loc", (delta * cie.code_align,)), pos + 1
    if low == 0x03:
        delta = int.from_bytes(data[pos : pos + 2], "little")
        if pos + 2 > len(data):
            raise ValueError("advance_loc2 truncated")
        return CfiInstruction("advance_loc", (delta * cie.code_align,)), pos + 2
    if low == 0x04:
        if pos + 4 > len(data):
            raise ValueError("advance_loc4 truncated")
        delta = int.from_bytes(data[pos : pos + 4], "little")
        return CfiInstruction("advance_loc", (delta * cie.code_align,)), pos + 4
    if low == 0x05:  # offset_extended
        reg, pos = read_uleb128(data, pos)
        off, pos = read_uleb128(data, pos)
        return CfiInstruction("offset", (reg, off * cie.data_align)), pos
    if low == 0x06:
        reg, pos = read_uleb128(data, pos)
        return CfiInstruction("restore", (reg,)), pos
    if low == 0x07:
        reg, pos = read_uleb128(data, pos)
        return CfiInstruction("undefined", (reg,)), pos
    if low == 0x08:
        reg, pos = read_uleb128(data, pos)
        return CfiInstruction("same_value", (reg,)), pos
    if low == 0x09:
        reg, pos = read_uleb128(data, pos)
        reg2, pos = read_uleb128(data, pos)
        return CfiInstruction("register", (reg, reg2)), pos
    if low == 0x0A:
        return CfiInstruction("remember_state"), pos
    if low == 0x0B:
        return CfiInstruction("restore_state"), pos
    if low == 0x0C:
        reg, pos = read_uleb128(data, pos)
        off, pos = read_uleb128(data, pos)
        return CfiInstruction("def_cfa", (reg, off)), pos
    if low == 0x0D:
        reg, pos = read_uleb128(data, pos)
        return CfiInstruction("def_cfa_register", (reg,)), pos
    if low == 0x0E:
        off, pos = read_uleb128(data, pos)
        return CfiInstruction("def_cfa_offset", (off,)), pos
    if low == 0x0F:
        blen, pos = read_uleb128(data, pos)
        block = data[pos : pos + blen]
        if len(block) < blen:
            raise ValueError("def_cfa_expression block truncated")
        return CfiInstruction("def_cfa_expression", raw=block), pos + blen
    if low == 0x10:  # expression(reg, block)
        reg, pos = read_uleb128(data, pos)
        blen, pos = read_uleb128(data, pos)
        block = data[pos : pos + blen]
        if len(block) < blen:
            raise ValueError("expression block truncated")
        return CfiInstruction("expression", (reg,), raw=block), pos + blen
    if low == 0x11:  # offset_extended_sf
        reg, pos = read_uleb128(data, pos)
        off, pos = read_sleb128(data, pos)
        return CfiInstruction("offset", (reg, off * cie.data_align)), pos
    if low == 0x12:  # def_cfa_sf
        reg, pos = read_uleb128(data, pos)
        off, pos = read_sleb128(data, pos)
        return CfiInstruction("def_cfa_sf", (reg, off * cie.data_align)), pos
    if low == 0x13:  # def_cfa_offset_sf
        off, pos = read_sleb128(data, pos)
        return CfiInstruction("def_cfa_offset_sf", (off * cie.data_align,)), pos
    if low == 0x14:  # val_offset
        reg, pos = read_uleb128(data, pos)
        off, pos = read_uleb128(data, pos)
        return CfiInstruction("val_offset", (reg, off)), pos
    if low == 0x15:  # val_offset_sf
        reg, pos = read_uleb128(data, pos)
        off, pos = read_sleb128(data, pos)
        return CfiInstruction("val_offset", (reg, off)), pos
    if low == 0x16:  # val_expression
        reg, pos = read_uleb128(data, pos)
        blen, pos = read_uleb128(data, pos)
        if pos + blen > len(data):
            raise ValueError("val_expression block truncated")
        return CfiInstruction("val_expression", (reg,), raw=data[pos : pos + blen]), pos + blen
    if low == 0x2E:  # GNU_args_size
        size, pos = read_uleb128(data, pos)
        return CfiInstruction("gnu_args_size", (size,)), pos
    if low == 0x2F:  # GNU_negative_offset_extended
        reg, pos = read_uleb128(data, pos)
        off, pos = read_uleb128(data, pos)
        return CfiInstruction("offset", (reg, -off * cie.data_align)), pos
    if low == 0x2D:  # GNU_window_save (SPARC; no operands)
        return CfiInstruction("other", raw=bytes([low])), pos
    raise ValueError(f"unknown CFI opcode 0x{low:02x} at +0x{start:x}")


def stack_heights(cie: Cie, fde: Fde) -> StackHeightTable:
    """Abstract-interpret the CFI stream into (address, height) entries."""
    instructions = decode_cfi(cie, fde)
    cursor = fde.pc_begin
    cfa_reg: int | None = None
    cfa_off: int | None = None
    entries: list[tuple[int, int]] = []
    saved: list[tuple[int | None, int | None]] = []
    complete = True
    reason: str | None = None

    def fail(why: str):
        nonlocal complete, reason
        if complete:
            complete = False
            reason = why

    def record():
        if cfa_reg != DWARF_RSP or cfa_off is None:
            return
        height = cfa_off - 8
        if height < 0:
            fail(f"cfa offset {cfa_off} below return-address slot")
            return
        if entries and entries[-1][0] == cursor:
            entries[-1] = (cursor, height)
        else:
            entries.append((cursor, height))

    first_rule_seen = False
    for inst in instructions:
        op = inst.opcode
        if op == "advance_loc":
            nxt = cursor + inst.operands[0]
            if nxt < cursor:
                fail("advance_loc moved backwards")
            cursor = nxt
        elif op == "set_loc":
            if inst.operands[0] < cursor:
                fail("set_loc moved backwards")
            cursor = inst.operands[0]
        elif op == "def_cfa":
            reg, off = inst.operands
            cfa_reg, cfa_off = reg, off
            if not first_rule_seen:
                first_rule_seen = True
                if reg != DWARF_RSP or off != 8:
                    fail("initial CFA rule is not rsp+8")
            if reg != DWARF_RSP:
                fail("cfa register not rsp")
            record()
        elif op == "def_cfa_sf":
            reg, off = inst.operands
            cfa_reg, cfa_off = reg, off
            if not first_rule_seen:
                first_rule_seen = True
                if reg != DWARF_RSP or off != 8:
                    fail("initial CFA rule is not rsp+8")
            if reg != DWARF_RSP:
                fail("cfa register not rsp")
            record()
        elif op == "def_cfa_register":
            cfa_reg = inst.operands[0]
            if cfa_reg != DWARF_RSP:
                fail("cfa register not rsp")
            record()
        elif op in ("def_cfa_offset", "def_cfa_offset_sf"):
            cfa_off = inst.operands[0]
            if not first_rule_seen:
                first_rule_seen = True
                fail("cfa offset set before any def_cfa rule")
            record()
        elif op == "def_cfa_expression":
            fail("cfa defined by expression")
        elif op == "remember_state":
            saved.append((cfa_reg, cfa_off))
        elif op == "restore_state":
            if not saved:
                fail("restore_state without remember_state")
            else:
                cfa_reg, cfa_off = saved.pop()
                record()
        # offset/restore/expression for callee-saved registers, nop, args_size:
        # no effect on the CFA rule, hence none on the height table.

    if not first_rule_seen:
        fail("no CFA rule in FDE")
    if saved:
        fail("remember_state left unbalanced")
    if not entries or entries[0][0] != fde.pc_begin:
        # A complete table must define the height from the first byte on.
        if complete:
            fail("no height recorded at function start")

    return StackHeightTable(
        function_start=fde.pc_begin,
        pc_range=fde.pc_range,
        entries=entries,
        complete=complete,
        incompleteness_reason=reason,
    )
