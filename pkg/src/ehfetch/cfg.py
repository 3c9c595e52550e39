"""Safe recursive disassembly from seed function starts.

Only facts the machine code guarantees are used: direct call targets become
new functions, resolved jump tables extend paths, everything else stops the
path.  Indirect calls are assumed to return; tail calls are deliberately not
detected here (a later pass handles them).  Non-returning status is solved
by iterating whole-program scans to a fixpoint, which also makes the result
independent of seed order: every iteration rescans each function from a
frozen status map, so no worklist ordering can leak into the output.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .decoder import Instruction, decode_at
from .ehframe import Fde
from .errors import InvalidOpcode, OutOfRange
from .image import BinaryImage
from .jumptable import JumpTableResolution, resolve_jump_table
from .noreturn import (DEFERRED, NORETURN, RETURNS, NoReturnDb, check_error_arg,
                       classify_call, is_exit_syscall, plt_stub_name)

MAX_FIXPOINT_ITERATIONS = 100


@dataclass
class BasicBlock:
    start: int
    end: int
    instructions: list[Instruction]
    successors: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class FunctionCfg:
    start: int
    blocks: dict[int, BasicBlock]
    provenance: str  # fde | call_target | pointer | tail_call
    insts: dict[int, Instruction] = field(default_factory=dict)
    exit_jumps: list[Instruction] = field(default_factory=list)
    jump_tables: dict[int, JumpTableResolution] = field(default_factory=dict)
    fde_ref: Fde | None = None
    body_range_hint: int | None = None


@dataclass
class FunctionSet:
    functions: dict[int, FunctionCfg] = field(default_factory=dict)
    statuses: dict[int, str] = field(default_factory=dict)
    call_graph_edges: set[tuple[int, int]] = field(default_factory=set)
    diagnostics: list[str] = field(default_factory=list)
    _inst_starts: list[int] = field(default_factory=list, repr=False)
    _inst_lengths: dict[int, int] = field(default_factory=dict, repr=False)

    def rebuild_instruction_map(self) -> None:
        lengths: dict[int, int] = {}
        shared = 0
        for fn in self.functions.values():
            for addr, inst in fn.insts.items():
                if addr in lengths:
                    shared += 1
                else:
                    lengths[addr] = inst.length
        self._inst_lengths = lengths
        self._inst_starts = sorted(lengths)

    def instruction_starts(self) -> list[int]:
        return self._inst_starts

    def covered(self, addr: int) -> bool:
        """True when addr lies anywhere inside a decoded instruction."""
        idx = bisect.bisect_right(self._inst_starts, addr) - 1
        if idx < 0:
            return False
        start = self._inst_starts[idx]
        return addr < start + self._inst_lengths[start]


def in_existing_instruction(fs: FunctionSet, addr: int) -> bool:
    """Strictly inside a decoded instruction's bytes, not at its start."""
    idx = bisect.bisect_right(fs._inst_starts, addr) - 1
    if idx < 0:
        return False
    start = fs._inst_starts[idx]
    return start < addr < start + fs._inst_lengths[start]


@dataclass
class _Scan:
    start: int
    insts: dict[int, Instruction] = field(default_factory=dict)
    succ: dict[int, list[tuple[int, str]]] = field(default_factory=dict)
    calls: set[int] = field(default_factory=set)
    exit_jumps: list[Instruction] = field(default_factory=list)
    jump_tables: dict[int, JumpTableResolution] = field(default_factory=dict)
    has_ret: bool = False
    deferred_targets: set[int] = field(default_factory=set)
    exit_deps: set[int] = field(default_factory=set)  # local jump targets we depend on
    diagnostics: list[str] = field(default_factory=list)


def _classify_exit_jump(img, db, scan, inst, target) -> None:
    """A jump leaving the function: returning status flows from the target."""
    scan.exit_jumps.append(inst)
    if img.in_plt(target):
        name = plt_stub_name(img, target)
        if name is None or name not in db.library_names:
            if name in db.conditional_names:
                if check_error_arg(scan.insts, inst) == RETURNS:
                    scan.has_ret = True
            else:
                scan.has_ret = True  # tail jump to a returning library call
        return
    scan.exit_deps.add(target)


def _scan_function(img: BinaryImage, start: int, starts: dict[int, str],
                   statuses: dict[int, str], db: NoReturnDb) -> _Scan:
    scan = _Scan(start=start)
    work = [start]
    visited: set[int] = set()
    while work:
        addr = work.pop()
        while True:
            if addr in visited:
                break
            covering = _covering_inst(scan, addr)
            if covering is not None:
                scan.diagnostics.append(
                    f"0x{addr:x}: lands inside instruction at 0x{covering:x}; path abandoned")
                break
            visited.add(addr)
            try:
                inst = decode_at(img, addr)
            except InvalidOpcode:
                scan.diagnostics.append(f"0x{addr:x}: invalid opcode; path abandoned")
                break
            except OutOfRange:
                scan.diagnostics.append(f"0x{addr:x}: outside executable sections")
                break
            scan.insts[addr] = inst
            kind = inst.kind
            if kind == "ret":
                scan.has_ret = True
                break
            if kind == "halt_like":
                break
            if kind == "syscall":
                if is_exit_syscall(scan.insts, inst):
                    break
                scan.succ[addr] = [(inst.fallthrough, "fallthrough")]
                addr = inst.fallthrough
                continue
            if kind == "jump_direct":
                t = inst.target
                if t != start and t in starts or img.in_plt(t):
                    _classify_exit_jump(img, db, scan, inst, t)
                    break
                if not img.is_executable_addr(t):
                    scan.diagnostics.append(f"0x{addr:x}: jump to non-code 0x{t:x}")
                    break
                scan.succ[addr] = [(t, "jump")]
                addr = t
                continue
            if kind == "jump_conditional":
                t = inst.target
                succs = [(inst.fallthrough, "cond_fallthrough")]
                if t != start and t in starts or img.in_plt(t):
                    _classify_exit_jump(img, db, scan, inst, t)
                elif img.is_executable_addr(t):
                    succs.append((t, "cond_taken"))
                    work.append(t)
                else:
                    scan.diagnostics.append(f"0x{addr:x}: branch to non-code 0x{t:x}")
                scan.succ[addr] = succs
                addr = inst.fallthrough
                continue
            if kind == "jump_indirect":
                res = resolve_jump_table(img, scan.insts, inst)
                if res is None:
                    scan.diagnostics.append(
                        f"0x{addr:x}: unresolved indirect jump; path stops")
                    break
                scan.jump_tables[addr] = res
                for d in res.diagnostics:
                    scan.diagnostics.append(d)
                scan.succ[addr] = [(t, "jumptable_entry") for t in res.targets]
                work.extend(res.targets)
                break
            if kind == "call_direct":
                t = inst.target
                if img.is_executable_addr(t):
                    scan.calls.add(t)
                status = classify_call(img, db, scan.insts, inst)
                if status == NORETURN:
                    break
                if status == DEFERRED:
                    scan.deferred_targets.add(t)
                    break
                scan.succ[addr] = [(inst.fallthrough, "fallthrough")]
                addr = inst.fallthrough
                continue
            # call_indirect and all plain instructions fall through
            scan.succ[addr] = [(inst.fallthrough, "fallthrough")]
            addr = inst.fallthrough
    return scan


def _covering_inst(scan: _Scan, addr: int) -> int | None:
    addrs = sorted(scan.insts)
    idx = bisect.bisect_right(addrs, addr) - 1
    if idx < 0:
        return None
    start = addrs[idx]
    if start < addr < start + scan.insts[start].length:
        return start
    return None


def _scan_status(scan: _Scan, statuses: dict[int, str]) -> str:
    if scan.has_ret:
        return RETURNS
    for t in scan.exit_deps:
        if statuses.get(t) == RETURNS:
            return RETURNS
    if scan.deferred_targets:
        return "unknown"
    if any(statuses.get(t, "unknown") == "unknown" for t in scan.exit_deps):
        return "unknown"
    return NORETURN


def _build_blocks(scan: _Scan) -> dict[int, BasicBlock]:
    if not scan.insts:
        return {}
    addrs = sorted(scan.insts)
    index = {a: i for i, a in enumerate(addrs)}
    leaders = {scan.start, addrs[0]}
    for src, succs in scan.succ.items():
        non_linear = any(k != "fallthrough" for _, k in succs) or not succs
        for target, kind in succs:
            if kind != "fallthrough" and target in scan.insts:
                leaders.add(target)
        if non_linear:
            # The instruction ends its block; whatever follows starts one.
            nxt = scan.insts[src].fallthrough
            if nxt in scan.insts:
                leaders.add(nxt)
    # An address whose linear predecessor does not fall through starts a block.
    for i, a in enumerate(addrs):
        if i == 0:
            continue
        prev = scan.insts[addrs[i - 1]]
        if prev.fallthrough != a or a not in {
            t for t, _ in scan.succ.get(prev.addr, [])
        }:
            leaders.add(a)
    blocks: dict[int, BasicBlock] = {}
    ordered = sorted(leaders & set(scan.insts))
    for bi, lead in enumerate(ordered):
        insts = []
        i = index[lead]
        while i < len(addrs):
            a = addrs[i]
            if a != lead and a in leaders:
                break
            inst = scan.insts[a]
            insts.append(inst)
            succs = scan.succ.get(a, [])
            if not succs or any(k != "fallthrough" for _, k in succs) \
                    or (succs and succs[0][0] != inst.fallthrough):
                break
            i += 1
        last = insts[-1]
        succs = [(t, k) for t, k in scan.succ.get(last.addr, [])
                 if t in scan.insts]
        blocks[lead] = BasicBlock(lead, last.fallthrough, insts, succs)
    return blocks


def recursive_disassemble(img: BinaryImage, seeds: list[int],
                          db: NoReturnDb,
                          provenance: dict[int, str] | None = None,
                          fde_map: dict[int, Fde] | None = None) -> FunctionSet:
    provenance = dict(provenance or {})
    fde_map = fde_map or {}
    fs = FunctionSet()
    starts: dict[int, str] = {}
    for s in sorted(set(seeds)):
        if img.is_executable_addr(s):
            starts[s] = provenance.get(s, "fde")
        else:
            fs.diagnostics.append(f"seed 0x{s:x} outside executable sections; dropped")

    statuses: dict[int, str] = {}
    scans: dict[int, _Scan] = {}
    forced = False
    for _ in range(MAX_FIXPOINT_ITERATIONS):
        db.resolved = dict(statuses)
        scans = {s: _scan_function(img, s, starts, statuses, db)
                 for s in sorted(starts)}
        changed = False
        for scan in scans.values():
            for t in sorted(scan.calls):
                if t not in starts and not img.in_plt(t):
                    starts[t] = "call_target"
                    changed = True
        new_statuses = {s: _scan_status(scan, statuses)
                        for s, scan in scans.items()}
        resolved = {s: st for s, st in new_statuses.items() if st != "unknown"}
        if resolved != {s: st for s, st in statuses.items() if st != "unknown"}:
            statuses = resolved
            changed = True
        if changed:
            forced = False
            continue
        stuck = [s for s, st in new_statuses.items() if st == "unknown"]
        if stuck and not forced:
            # Ret-free call/jump cycles: no path in the cycle reaches a ret,
            # so every member is non-returning.
            for s in stuck:
                statuses[s] = NORETURN
            forced = True
            continue
        break
    else:
        fs.diagnostics.append("disassembly fixpoint iteration cap reached")

    for s in sorted(starts):
        scan = scans[s]
        fde = fde_map.get(s)
        fn = FunctionCfg(
            start=s,
            blocks=_build_blocks(scan),
            provenance=starts[s],
            insts=scan.insts,
            exit_jumps=scan.exit_jumps,
            jump_tables=scan.jump_tables,
            fde_ref=fde,
            body_range_hint=fde.pc_range if fde else None,
        )
        fs.functions[s] = fn
        fs.statuses[s] = statuses.get(s, NORETURN)
        for callee in scan.calls:
            fs.call_graph_edges.add((s, callee))
        for d in scan.diagnostics:
            fs.diagnostics.append(f"fn 0x{s:x}: {d}")
    fs.rebuild_instruction_map()
    return fs
