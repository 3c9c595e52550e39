"""Returning/non-returning call classification."""

import pytest

from ehfetch.decoder import decode_bytes
from ehfetch.image import load_binary
from ehfetch.noreturn import (DEFERRED, NORETURN, RETURNS, NoReturnDb,
                              check_error_arg, classify_call, is_exit_syscall,
                              load_noreturn_list, plt_stub_name)


def seq(*hexes, base=0x1000):
    insts = {}
    addr = base
    for h in hexes:
        inst = decode_bytes(bytes.fromhex(h), addr)
        insts[addr] = inst
        addr += inst.length
    return insts


def last(insts):
    return insts[max(insts)]


def test_default_list_contents():
    names = load_noreturn_list()
    assert {"abort", "exit", "_exit", "__stack_chk_fail", "__assert_fail"} <= names
    # conditionally non-returning names are handled separately, never listed
    assert "error" not in names and "error_at_line" not in names


def test_custom_list_with_comments(tmp_path):
    p = tmp_path / "list.txt"
    p.write_text("# wrappers\nmy_fatal\n\nerror  # stripped: conditional\n")
    assert load_noreturn_list(str(p)) == {"my_fatal"}


def test_error_arg_zero_via_xor():
    insts = seq("31ff", "e800000000")  # xor %edi,%edi; call
    assert check_error_arg(insts, last(insts)) == RETURNS


def test_error_arg_zero_via_mov_imm():
    insts = seq("bf00000000", "e800000000")
    assert check_error_arg(insts, last(insts)) == RETURNS


def test_error_arg_nonzero_imm():
    insts = seq("bf01000000", "e800000000")
    assert check_error_arg(insts, last(insts)) == NORETURN


def test_error_arg_unknown_value():
    insts = seq("488b3f", "e800000000")  # mov (%rdi),%rdi: not provably zero
    assert check_error_arg(insts, last(insts)) == NORETURN


def test_error_arg_search_stops_at_terminator():
    insts = seq("31ff", "c3", "e800000000")
    assert check_error_arg(insts, last(insts)) == NORETURN


def test_error_arg_no_definition_in_sight():
    insts = seq("e800000000")
    assert check_error_arg(insts, last(insts)) == NORETURN


def test_exit_syscall_constant_numbers():
    insts = seq("b83c000000", "0f05")  # mov $60,%eax; syscall
    assert is_exit_syscall(insts, last(insts))
    insts = seq("b8e7000000", "0f05")  # exit_group
    assert is_exit_syscall(insts, last(insts))
    insts = seq("b801000000", "0f05")  # write
    assert not is_exit_syscall(insts, last(insts))
    insts = seq("0f05")  # unknown %eax
    assert not is_exit_syscall(insts, last(insts))


def test_classify_indirect_call_assumed_returning(corpus):
    img = load_binary(corpus.stripped(corpus.entry("plain")))
    db = NoReturnDb(library_names=load_noreturn_list())
    insts = seq("ffd0")  # call *%rax
    assert classify_call(img, db, insts, last(insts)) == RETURNS


def test_classify_local_call_statuses(corpus):
    img = load_binary(corpus.stripped(corpus.entry("plain")))
    db = NoReturnDb(library_names=load_noreturn_list())
    text = img.section_by_name(".text").vaddr
    rel = (text - 0x1005) & 0xFFFFFFFF
    call = seq("e8" + rel.to_bytes(4, "little").hex())
    inst = last(call)
    assert inst.target == text
    assert classify_call(img, db, call, inst) == DEFERRED
    db.resolved[text] = RETURNS
    assert classify_call(img, db, call, inst) == RETURNS
    db.resolved[text] = NORETURN
    assert classify_call(img, db, call, inst) == NORETURN


def plt_names(img):
    out = {}
    for sec in img.plt_sections():
        for addr in range(sec.vaddr, sec.vaddr + sec.size, 16):
            name = plt_stub_name(img, addr)
            if name:
                out[name] = addr
    return out


def test_plt_stub_names_resolve(corpus):
    img = load_binary(corpus.stripped(corpus.entry("noreturn_chain")))
    names = plt_names(img)
    assert "exit" in names and "puts" in names


def test_plt_stub_name_outside_plt_is_none(corpus):
    img = load_binary(corpus.stripped(corpus.entry("noreturn_chain")))
    assert plt_stub_name(img, img.section_by_name(".text").vaddr) is None


def test_classify_plt_calls(corpus):
    img = load_binary(corpus.stripped(corpus.entry("noreturn_chain")))
    db = NoReturnDb(library_names=load_noreturn_list())
    names = plt_names(img)

    def call_to(stub):
        base = 0x999000  # anywhere; only the target matters
        rel = (stub - (base + 5)) & 0xFFFFFFFF
        return seq("e8" + rel.to_bytes(4, "little").hex(), base=base)

    insts = call_to(names["exit"])
    assert classify_call(img, db, insts, last(insts)) == NORETURN
    insts = call_to(names["puts"])
    assert classify_call(img, db, insts, last(insts)) == RETURNS
