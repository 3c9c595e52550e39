"""Function-pointer candidate collection and speculative validation."""

import pytest

from ehfetch.cfg import recursive_disassemble
from ehfetch.decoder import decode_bytes
from ehfetch.image import (BinaryImage, Section, SHF_ALLOC, SHF_EXECINSTR,
                           SHT_PROGBITS, load_binary)
from ehfetch.noreturn import NoReturnDb, load_noreturn_list
from ehfetch.pointers import (EXEMPT_REGS, PointerCandidate, collect_candidates,
                              meets_call_convention, must_init_violation,
                              speculative_scan, validate_candidate)


def make_db():
    return NoReturnDb(library_names=load_noreturn_list())


def code_image(code: bytes, at=0x1000):
    text = Section(".text", at, len(code), 0, SHT_PROGBITS,
                   SHF_ALLOC | SHF_EXECINSTR)
    return BinaryImage(path="<mem>", entry_point=at, sections=[text],
                       segments=[], is_pie=False, raw=code)


def test_exempt_registers_are_arguments_plus_stack():
    from ehfetch.decoder import ARGUMENT_REGS, RBP, RSP
    assert EXEMPT_REGS == ARGUMENT_REGS | {RSP, RBP}


def test_candidates_include_planted_data_pointer(corpus):
    e = corpus.entry("ptr_only")
    img = load_binary(corpus.unstripped(e))
    target = {n: a for a, s, n in img.func_symbol_sizes()}["ptr_only_fn"]
    r = corpus.result(e, pointer_scan=False)
    cands = collect_candidates(load_binary(corpus.stripped(e)), r.function_set)
    by_value = {c.value: c for c in cands}
    assert target in by_value
    assert by_value[target].origin == "data_scan"


def test_candidates_skip_existing_and_covered(corpus):
    e = corpus.entry("plain")
    r = corpus.result(e)
    img = load_binary(corpus.stripped(e))
    cands = collect_candidates(img, r.function_set)
    for c in cands:
        assert c.value not in r.function_set.functions
        assert not r.function_set.covered(c.value)
        assert img.is_executable_addr(c.value)
        assert not img.in_plt(c.value)


def test_reading_argument_registers_is_fine():
    img = code_image(bytes.fromhex("89f8c3"))  # mov %edi,%eax ; ret
    assert meets_call_convention(img, 0x1000, make_db())


def test_reading_scratch_register_violates():
    img = code_image(bytes.fromhex("89c2c3"))  # mov %eax,%edx ; ret
    assert not meets_call_convention(img, 0x1000, make_db())


def test_push_of_callee_saved_is_not_a_use():
    img = code_image(bytes.fromhex("535bc3"))  # push %rbx ; pop %rbx ; ret
    assert meets_call_convention(img, 0x1000, make_db())


def test_use_after_definition_is_fine():
    img = code_image(bytes.fromhex("31db89d8c3"))  # xor %ebx,%ebx ; mov %ebx,%eax ; ret
    assert meets_call_convention(img, 0x1000, make_db())


def test_branch_join_requires_definition_on_every_path():
    # test %edi,%edi ; je +2 ; xor %ebx,%ebx ; mov %ebx,%eax ; ret
    # the taken edge skips the definition of %rbx
    img = code_image(bytes.fromhex("85ff740231db89d8c3"))
    assert not meets_call_convention(img, 0x1000, make_db())
    # defining %rbx before the branch repairs both paths
    img = code_image(bytes.fromhex("31db85ff7402669089d8c3"))
    assert meets_call_convention(img, 0x1000, make_db())


def test_invalid_opcode_rejects():
    img = code_image(b"\x06\xc3")
    db = make_db()
    scan = speculative_scan(img, 0x1000, db)
    assert scan.reject_reason == "invalid opcode"
    assert not meets_call_convention(img, 0x1000, db)


def test_transfer_into_existing_function_rejects():
    # existing function: mov $5,%eax ; ret    candidate: jmp into its middle
    code = bytes.fromhex("b805000000c3") + bytes.fromhex("ebfa")
    img = code_image(code)
    fs = recursive_disassemble(img, [0x1000], make_db())
    scan = speculative_scan(img, 0x1006, make_db(), fs=fs)
    assert scan.reject_reason == "transfer into existing function"


def test_mid_instruction_entry_rejects():
    code = bytes.fromhex("b805000000c3")
    img = code_image(code)
    fs = recursive_disassemble(img, [0x1000], make_db())
    scan = speculative_scan(img, 0x1002, make_db(), fs=fs)
    assert scan.reject_reason == "mid-instruction"


def test_validate_candidate_accept_and_reject(corpus):
    e = corpus.entry("ptr_only")
    img = load_binary(corpus.stripped(e))
    unstripped = load_binary(corpus.unstripped(e))
    target = {n: a for a, s, n in unstripped.func_symbol_sizes()}["ptr_only_fn"]
    r = corpus.result(e, pointer_scan=False)
    db = make_db()
    good = PointerCandidate(target, "data_scan")
    validate_candidate(img, r.function_set, db, good)
    assert good.validated == "accepted"
    bad = PointerCandidate(target + 1, "data_scan")
    validate_candidate(img, r.function_set, db, bad)
    assert bad.validated.startswith("rejected(")


def test_must_init_violation_reports_earliest_address():
    insts = {}
    addr = 0x1000
    for h in ("89c2", "89d8", "c3"):  # mov %eax,%edx ; mov %ebx,%eax ; ret
        inst = decode_bytes(bytes.fromhex(h), addr)
        insts[addr] = inst
        addr += inst.length
    succ = {0x1000: [0x1002], 0x1002: [0x1004]}
    assert must_init_violation(insts, succ, 0x1000) == 0x1000


def test_accepted_pointer_reaches_final_result(corpus):
    e = corpus.entry("ptr_only")
    unstripped = load_binary(corpus.unstripped(e))
    target = {n: a for a, s, n in unstripped.func_symbol_sizes()}["ptr_only_fn"]
    r = corpus.result(e)
    by_addr = dict(r.function_starts)
    assert by_addr.get(target) == "pointer"


def test_few_accepted_pointers_and_all_true(corpus):
    """Validation is strict: at most a handful of accepted starts, all real."""
    for e in corpus.entries():
        r = corpus.result(e)
        accepted = [a for a, p in r.function_starts if p == "pointer"]
        assert len(accepted) <= 5, e["stripped"]
        truth = set(corpus.truth(e))
        assert set(accepted) <= truth, e["stripped"]
