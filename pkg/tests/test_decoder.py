"""Instruction decoding: frozen byte cases plus corpus boundary cross-check.

The corpus oracle (tests/oracles/insn_bounds.json) holds the (address, length)
stream an independent disassembler produced for several fixture text sections;
the decoder must agree on every boundary.
"""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ehfetch.decoder import (ARGUMENT_REGS, R8, R13, R14, RAX, RBP, RBX, RCX,
                             RDI, RDX, RSI, RSP, decode_at, decode_bytes)
from ehfetch.errors import InvalidOpcode, OutOfRange
from ehfetch.image import load_binary

# raw bytes -> (length, kind, mnemonic) decoded at 0x1000
KIND_CASES = [
    ("c3", 1, "ret", "ret"),
    ("e805000000", 5, "call_direct", "call"),
    ("ebfe", 2, "jump_direct", "jmp"),
    ("7410", 2, "jump_conditional", "je"),
    ("4883ec28", 4, "sub_rsp", "sub"),
    ("ffe0", 2, "jump_indirect", "jmp"),
    ("0f05", 2, "syscall", "syscall"),
    ("f4", 1, "halt_like", "hlt"),
    ("0f0b", 2, "halt_like", "ud2"),
    ("55", 1, "push", "push"),
    ("6a00", 2, "push", "push"),
    ("f30f1efa", 4, "other", "endbr"),
    ("4889e5", 3, "move", "mov"),
    ("bf01000000", 5, "move", "mov"),
    ("83f804", 3, "other", "cmp"),
]


@pytest.mark.parametrize("raw,length,kind,mnemonic", KIND_CASES)
def test_length_kind_mnemonic(raw, length, kind, mnemonic):
    inst = decode_bytes(bytes.fromhex(raw), 0x1000)
    assert (inst.length, inst.kind, inst.mnemonic) == (length, kind, mnemonic)


def test_relative_targets_resolve_from_instruction_end():
    assert decode_bytes(bytes.fromhex("e805000000"), 0x1000).target == 0x100A
    assert decode_bytes(bytes.fromhex("ebfe"), 0x1000).target == 0x1000
    assert decode_bytes(bytes.fromhex("7410"), 0x1000).target == 0x1012


def test_rip_relative_memory_resolves_to_absolute():
    inst = decode_bytes(bytes.fromhex("488b0510000000"), 0x200)
    assert inst.memory.rip_relative
    assert inst.memory.disp == 0x200 + 7 + 0x10
    assert inst.writes == {RAX}


def test_register_cells():
    # mov %rsp,%rbp: reads the stack pointer cell, writes the frame pointer
    inst = decode_bytes(bytes.fromhex("4889e5"), 0)
    assert inst.reads == {RSP} and inst.writes == {RBP}
    assert (inst.src_reg, inst.dst_reg) == (RSP, RBP)
    # REX.B selects the extended bank
    inst = decode_bytes(bytes.fromhex("4531ed"), 0)
    assert inst.dst_reg == R13 and inst.writes == {R13}


def test_xor_self_is_definition_only():
    inst = decode_bytes(bytes.fromhex("31c0"), 0)
    assert inst.reads == set() and inst.writes == {RAX}


def test_cmp_writes_nothing():
    inst = decode_bytes(bytes.fromhex("83f804"), 0)
    assert inst.reads == {RAX} and inst.writes == set()
    assert inst.immediates == ((4, 1),)


def test_push_tracks_source_and_stack():
    inst = decode_bytes(bytes.fromhex("55"), 0)
    assert inst.src_reg == RBP
    assert inst.reads == {RSP, RBP} and inst.writes == {RSP}


def test_call_clobbers_scratch_state():
    inst = decode_bytes(bytes.fromhex("e805000000"), 0)
    assert RSP in inst.writes


def test_sib_memory_operand():
    inst = decode_bytes(bytes.fromhex("ff24c544332211"), 0)
    m = inst.memory
    assert (m.base, m.index, m.scale, m.disp) == (None, RAX, 8, 0x11223344)
    # SIB with base, index from the extended bank, and disp32
    inst = decode_bytes(bytes.fromhex("420fb68c3040302010"), 0)
    m = inst.memory
    assert (m.base, m.index, m.scale, m.disp) == (RAX, R14, 1, 0x10203040)
    assert inst.reads == {RAX, R14} and inst.writes == {RCX}


def test_immediate_widths():
    assert decode_bytes(bytes.fromhex("48c7c03c000000"), 0).immediates == ((60, 4),)
    assert decode_bytes(bytes.fromhex("4883ec28"), 0).immediates == ((40, 1),)


def test_fallthrough_and_terminator():
    ret = decode_bytes(bytes.fromhex("c3"), 0x50)
    assert ret.is_terminator
    mov = decode_bytes(bytes.fromhex("4889e5"), 0x50)
    assert not mov.is_terminator and mov.fallthrough == 0x53


def test_argument_register_set():
    assert ARGUMENT_REGS == {RDI, RSI, RDX, RCX, R8, 9}
    assert RBX not in ARGUMENT_REGS and RAX not in ARGUMENT_REGS


def test_invalid_bytes_raise():
    with pytest.raises(InvalidOpcode):
        decode_bytes(bytes.fromhex("06"), 0)  # legacy push es, removed in 64-bit
    with pytest.raises(InvalidOpcode):
        decode_bytes(b"\x48", 0)  # lone REX prefix


def test_decode_at_outside_code_raises(corpus):
    img = load_binary(corpus.stripped(corpus.entry("plain")))
    with pytest.raises(OutOfRange):
        decode_at(img, 0x10)


@given(st.binary(min_size=1, max_size=18))
def test_decoded_length_within_bounds(raw):
    try:
        inst = decode_bytes(raw, 0x1000)
    except (InvalidOpcode, OutOfRange):
        return
    assert 1 <= inst.length <= min(15, len(raw))
    assert inst.fallthrough == 0x1000 + inst.length


@given(st.binary(min_size=1, max_size=18))
def test_decoding_is_deterministic(raw):
    def run():
        try:
            return decode_bytes(raw, 0x40)
        except (InvalidOpcode, OutOfRange) as exc:
            return type(exc).__name__
    assert run() == run()


def test_corpus_boundaries_match_disassembler(corpus, insn_bounds):
    """Linear decode of .text reproduces the oracle's (addr, length) stream."""
    import pathlib
    prebuilt = pathlib.Path(corpus.stripped(corpus.entry("plain"))).parent
    for name, bounds in insn_bounds.items():
        img = load_binary(str(prebuilt / name))
        got = []
        addr, end = bounds[0][0], bounds[-1][0] + bounds[-1][1]
        while addr < end:
            inst = decode_at(img, addr)
            got.append([addr, inst.length])
            addr += inst.length
        assert got == bounds, name
