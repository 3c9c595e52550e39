"""ELF64 loading: immutable binary image with section-level address translation.

Only the read surface needed by detection lives here.  Symbol access is kept
on a separate method so the detection pipeline can avoid it by construction;
only the evaluation harness and the PLT name resolver (dynamic symbols, which
survive stripping) touch symbol tables.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import NotElf, OutOfRange, Truncated, UnsupportedArch

SHT_PROGBITS = 1
SHT_SYMTAB = 2
SHT_NOBITS = 8
SHT_DYNSYM = 11
SHT_RELA = 4

SHF_WRITE = 0x1
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4

PT_LOAD = 1

STT_FUNC = 2
R_X86_64_JUMP_SLOT = 7


@dataclass(frozen=True)
class Section:
    name: str
    vaddr: int
    size: int
    file_offset: int
    sh_type: int
    flags: int

    @property
    def executable(self) -> bool:
        return bool(self.flags & SHF_EXECINSTR)

    @property
    def writable(self) -> bool:
        return bool(self.flags & SHF_WRITE)

    @property
    def allocated(self) -> bool:
        return bool(self.flags & SHF_ALLOC)

    @property
    def is_nobits(self) -> bool:
        return self.sh_type == SHT_NOBITS

    def contains(self, vaddr: int) -> bool:
        return self.vaddr <= vaddr < self.vaddr + self.size


@dataclass(frozen=True)
class Segment:
    vaddr: int
    memsz: int
    filesz: int
    flags: int  # PF_X=1, PF_W=2, PF_R=4

    @property
    def executable(self) -> bool:
        return bool(self.flags & 1)


@dataclass
class BinaryImage:
    path: str
    entry_point: int
    sections: list[Section]
    segments: list[Segment]
    is_pie: bool
    raw: bytes
    _alloc: list[Section] = field(init=False, repr=False)

    def __post_init__(self):
        self._alloc = sorted(
            (s for s in self.sections if s.allocated and s.size > 0),
            key=lambda s: s.vaddr,
        )

    def section_by_name(self, name: str) -> Section | None:
        for s in self.sections:
            if s.name == name:
                return s
        return None

    def section_at(self, vaddr: int) -> Section | None:
        for s in self._alloc:
            if s.contains(vaddr):
                return s
        return None

    def read_bytes(self, vaddr: int, length: int) -> bytes:
        """Read from a single allocated section; nobits ranges read as zeros."""
        if length < 0:
            raise OutOfRange(f"negative length {length}")
        sec = self.section_at(vaddr)
        if sec is None or vaddr + length > sec.vaddr + sec.size:
            raise OutOfRange(f"0x{vaddr:x}+{length} not mapped by one section")
        if sec.is_nobits:
            return b"\x00" * length
        off = sec.file_offset + (vaddr - sec.vaddr)
        return self.raw[off : off + length]

    def is_executable_addr(self, vaddr: int) -> bool:
        sec = self.section_at(vaddr)
        return sec is not None and sec.executable

    def executable_sections(self) -> list[Section]:
        return [s for s in self._alloc if s.executable]

    def symbols_if_present(self) -> list[tuple[int, str]]:
        """Function-typed symbols from .symtab, else .dynsym.  Evaluation only."""
        for table in (".symtab", ".dynsym"):
            sec = self.section_by_name(table)
            if sec is None:
                continue
            out = self._read_func_symbols(sec)
            if out:
                return out
        return []

    def _read_func_symbols(self, sec: Section) -> list[tuple[int, str]]:
        strtab = self._linked_strtab(sec)
        out = []
        for value, _size, info, shndx, name in self._iter_symbols(sec, strtab):
            if info & 0xF == STT_FUNC and shndx != 0 and name:
                out.append((value, name))
        return sorted(set(out))

    def func_symbol_sizes(self) -> list[tuple[int, int, str]]:
        """(addr, size, name) for defined FUNC symbols; ground-truth tooling."""
        for table in (".symtab", ".dynsym"):
            sec = self.section_by_name(table)
            if sec is None:
                continue
            strtab = self._linked_strtab(sec)
            out = []
            for value, size, info, shndx, name in self._iter_symbols(sec, strtab):
                if info & 0xF == STT_FUNC and shndx != 0:
                    out.append((value, size, name))
            if out:
                return sorted(out)
        return []

    def _linked_strtab(self, symsec: Section) -> bytes:
        # sh_link is not kept on Section; find the conventional name instead.
        name = ".strtab" if symsec.name == ".symtab" else ".dynstr"
        strsec = self.section_by_name(name)
        if strsec is None or strsec.is_nobits:
            return b""
        return self.raw[strsec.file_offset : strsec.file_offset + strsec.size]

    def _iter_symbols(self, sec: Section, strtab: bytes):
        data = self.raw[sec.file_offset : sec.file_offset + sec.size]
        for off in range(0, len(data) - 23, 24):
            st_name, st_info, _other, st_shndx, st_value, st_size = struct.unpack_from(
                "<IBBHQQ", data, off
            )
            end = strtab.find(b"\x00", st_name)
            name = strtab[st_name:end].decode("utf-8", "replace") if end >= 0 else ""
            yield st_value, st_size, st_info, st_shndx, name

    def plt_got_names(self) -> dict[int, str]:
        """Map GOT slot vaddr -> dynamic symbol name, from JUMP_SLOT relocations."""
        dynsym = self.section_by_name(".dynsym")
        if dynsym is None:
            return {}
        strtab = self._linked_strtab(dynsym)
        names = []
        for _v, _s, _i, _n, name in self._iter_symbols(dynsym, strtab):
            names.append(name)
        out: dict[int, str] = {}
        for rela_name in (".rela.plt", ".rela.dyn"):
            sec = self.section_by_name(rela_name)
            if sec is None:
                continue
            data = self.raw[sec.file_offset : sec.file_offset + sec.size]
            for off in range(0, len(data) - 23, 24):
                r_offset, r_info, _addend = struct.unpack_from("<QQq", data, off)
                rtype = r_info & 0xFFFFFFFF
                symidx = r_info >> 32
                if rtype == R_X86_64_JUMP_SLOT and 0 < symidx < len(names):
                    out[r_offset] = names[symidx]
        return out

    def plt_sections(self) -> list[Section]:
        return [
            s
            for s in self._alloc
            if s.executable and s.name in (".plt", ".plt.got", ".plt.sec")
        ]

    def in_plt(self, vaddr: int) -> bool:
        return any(s.contains(vaddr) for s in self.plt_sections())


def load_binary(path: str) -> BinaryImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 64 or raw[:4] != b"\x7fELF":
        raise NotElf(f"{path}: bad ELF magic")
    ei_class, ei_data = raw[4], raw[5]
    if ei_class != 2 or ei_data != 1:
        raise UnsupportedArch(f"{path}: need ELF64 little-endian")
    (e_type, e_machine, _ver, e_entry, e_phoff, e_shoff, _flags, _ehsize,
     e_phentsize, e_phnum, e_shentsize, e_shnum, e_shstrndx) = struct.unpack_from(
        "<HHIQQQIHHHHHH", raw, 16
    )
    if e_machine != 62:  # EM_X86_64
        raise UnsupportedArch(f"{path}: machine {e_machine} is not x86-64")

    segments = []
    for i in range(e_phnum):
        off = e_phoff + i * e_phentsize
        if off + 56 > len(raw):
            raise Truncated(f"{path}: program header {i} out of file")
        p_type, p_flags, _off, p_vaddr, _pa, p_filesz, p_memsz, _al = struct.unpack_from(
            "<IIQQQQQQ", raw, off
        )
        if p_type == PT_LOAD:
            segments.append(Segment(p_vaddr, p_memsz, p_filesz, p_flags))

    if e_shoff == 0 or e_shnum == 0:
        raise Truncated(f"{path}: no section headers")
    headers = []
    for i in range(e_shnum):
        off = e_shoff + i * e_shentsize
        if off + 64 > len(raw):
            raise Truncated(f"{path}: section header {i} out of file")
        headers.append(struct.unpack_from("<IIQQQQIIQQ", raw, off))
    shstr = headers[e_shstrndx]
    shstr_data = raw[shstr[4] : shstr[4] + shstr[5]]

    sections = []
    for sh_name, sh_type, sh_flags, sh_addr, sh_off, sh_size, *_rest in headers:
        end = shstr_data.find(b"\x00", sh_name)
        name = shstr_data[sh_name:end].decode("utf-8", "replace") if end >= 0 else ""
        if sh_type != SHT_NOBITS and sh_off + sh_size > len(raw):
            raise Truncated(f"{path}: section {name} extends past file end")
        sections.append(Section(name, sh_addr, sh_size, sh_off, sh_type, sh_flags))

    return BinaryImage(
        path=path,
        entry_point=e_entry,
        sections=sections,
        segments=segments,
        is_pie=(e_type == 3),  # ET_DYN
        raw=raw,
    )
