"""Decoding of the .eh_frame section into CIE and FDE records.

Follows the LSB exception-frames layout: initial-length framing (with the
0xffffffff extended-length escape), CIE id 0, FDE cie pointers as backward
offsets, and DWARF-style encoded pointers for pc_begin.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import MissingEhFrame
from .image import BinaryImage
from .leb128 import read_sleb128, read_uleb128

DW_EH_PE_omit = 0xFF

_FORMAT_SIZES = {
    0x0: 8,  # absptr on ELF64
    0x2: 2,  # udata2
    0x3: 4,  # udata4
    0x4: 8,  # udata8
    0xA: 2,  # sdata2
    0xB: 4,  # sdata4
    0xC: 8,  # sdata8
}

_APPLICATIONS = {0x00: "absolute", 0x10: "pc_relative", 0x30: "datarel"}


@dataclass(frozen=True)
class PointerEncoding:
    raw: int

    @property
    def omitted(self) -> bool:
        return self.raw == DW_EH_PE_omit

    @property
    def value_format(self) -> int:
        return self.raw & 0x0F

    @property
    def application(self) -> str:
        return _APPLICATIONS.get(self.raw & 0x70, "other")

    @property
    def indirect(self) -> bool:
        return bool(self.raw & 0x80)

    def supported(self) -> bool:
        if self.omitted or self.indirect:
            return False
        return self.value_format in (0x1, 0x9) or self.value_format in _FORMAT_SIZES


DEFAULT_ENCODING = PointerEncoding(0x00)  # absolute udata8


def read_encoded(data: bytes, pos: int, enc: PointerEncoding, field_vaddr: int
                 ) -> tuple[int, int]:
    """Decode one encoded pointer; field_vaddr is the vaddr of the field itself."""
    fmt = enc.value_format
    if fmt == 0x1:
        value, pos = read_uleb128(data, pos)
    elif fmt == 0x9:
        value, pos = read_sleb128(data, pos)
    else:
        size = _FORMAT_SIZES[fmt]
        chunk = data[pos : pos + size]
        if len(chunk) < size:
            raise ValueError("encoded pointer truncated")
        signed = fmt >= 0xA
        value = int.from_bytes(chunk, "little", signed=signed)
        pos += size
    if enc.application == "pc_relative":
        value = (value + field_vaddr) & 0xFFFFFFFFFFFFFFFF
    return value, pos


@dataclass
class Cie:
    offset_in_section: int
    version: int
    augmentation: str
    code_align: int
    data_align: int
    return_address_column: int
    fde_pointer_encoding: PointerEncoding
    initial_cfi_bytes: bytes
    lsda_encoding: PointerEncoding = DEFAULT_ENCODING
    usable: bool = True  # False when an unknown augmentation letter was seen


@dataclass
class Fde:
    offset_in_section: int
    cie: Cie
    pc_begin: int
    pc_range: int
    cfi_bytes: bytes
    lsda: int | None = None

    @property
    def pc_end(self) -> int:
        return self.pc_begin + self.pc_range

    def contains(self, addr: int) -> bool:
        return self.pc_begin <= addr < self.pc_end


@dataclass
class EhFrameResult:
    cies: list[Cie]
    fdes: list[Fde]
    diagnostics: list[str] = field(default_factory=list)


def parse_eh_frame(img: BinaryImage) -> EhFrameResult:
    sec = img.section_by_name(".eh_frame")
    if sec is None or sec.size == 0:
        raise MissingEhFrame(f"{img.path}: no .eh_frame section")
    data = img.read_bytes(sec.vaddr, sec.size)
    result = EhFrameResult(cies=[], fdes=[])
    cies_by_offset: dict[int, Cie] = {}

    pos = 0
    while pos + 4 <= len(data):
        entry_off = pos
        length = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        if length == 0:  # terminator
            continue
        if length == 0xFFFFFFFF:
            if pos + 8 > len(data):
                result.diagnostics.append(
                    f"truncated extended length at +0x{entry_off:x}")
                break
            length = struct.unpack_from("<Q", data, pos)[0]
            pos += 8
        entry_end = pos + length
        if entry_end > len(data):
            result.diagnostics.append(
                f"entry at +0x{entry_off:x} overruns section; stopping")
            break
        id_field_off = pos
        cie_id = struct.unpack_from("<I", data, pos)[0]
        pos += 4
        body = data[pos:entry_end]
        try:
            if cie_id == 0:
                cie = _parse_cie(entry_off, body, result.diagnostics)
                cies_by_offset[entry_off] = cie
                result.cies.append(cie)
            else:
                cie_off = id_field_off - cie_id
                cie = cies_by_offset.get(cie_off)
                if cie is None:
                    result.diagnostics.append(
                        f"FDE at +0x{entry_off:x}: no CIE at +0x{cie_off:x}")
                elif not cie.usable:
                    result.diagnostics.append(
                        f"FDE at +0x{entry_off:x}: skipped, CIE augmentation unsupported")
                else:
                    fde = _parse_fde(entry_off, body, cie, sec.vaddr + pos,
                                     result.diagnostics)
                    if fde is not None:
                        result.fdes.append(fde)
        except (ValueError, IndexError, struct.error) as exc:
            result.diagnostics.append(f"malformed entry at +0x{entry_off:x}: {exc}")
        pos = entry_end

    _record_overlaps(result)
    _crosscheck_hdr(img, result)
    return result


def _parse_cie(offset: int, body: bytes, diags: list[str]) -> Cie:
    pos = 0
    version = body[pos]
    pos += 1
    nul = body.index(b"\x00", pos)
    augmentation = body[pos:nul].decode("ascii", "replace")
    pos = nul + 1
    if version not in (1, 3, 4):
        diags.append(f"CIE at +0x{offset:x}: unsupported version {version}")
    if version == 4:
        pos += 2  # address_size, segment_size
    code_align, pos = read_uleb128(body, pos)
    data_align, pos = read_sleb128(body, pos)
    if version == 1:
        ra_column = body[pos]
        pos += 1
    else:
        ra_column, pos = read_uleb128(body, pos)

    fde_enc = DEFAULT_ENCODING
    lsda_enc = DEFAULT_ENCODING
    usable = True
    if augmentation.startswith("z"):
        aug_len, pos = read_uleb128(body, pos)
        aug_end = pos + aug_len
        for letter in augmentation[1:]:
            if letter == "R":
                fde_enc = PointerEncoding(body[pos])
                pos += 1
            elif letter == "L":
                lsda_enc = PointerEncoding(body[pos])
                pos += 1
            elif letter == "P":
                enc = PointerEncoding(body[pos])
                pos += 1
                _, pos = read_encoded(body, pos, enc, 0)
            elif letter == "S":
                pass  # signal frame marker, no data
            else:
                diags.append(
                    f"CIE at +0x{offset:x}: unknown augmentation letter {letter!r}")
                usable = False
                break
        pos = aug_end
    elif augmentation:
        diags.append(f"CIE at +0x{offset:x}: augmentation {augmentation!r} without 'z'")
        usable = False

    return Cie(
        offset_in_section=offset,
        version=version,
        augmentation=augmentation,
        code_align=code_align,
        data_align=data_align,
        return_address_column=ra_column,
        fde_pointer_encoding=fde_enc,
        initial_cfi_bytes=body[pos:],
        lsda_encoding=lsda_enc,
        usable=usable,
    )


def _parse_fde(offset: int, body: bytes, cie: Cie, body_vaddr: int,
               diags: list[str]) -> Fde | None:
    enc = cie.fde_pointer_encoding
    if not enc.supported():
        diags.append(
            f"FDE at +0x{offset:x}: unsupported pc_begin encoding 0x{enc.raw:02x}")
        return None
    pos = 0
    pc_begin, pos = read_encoded(body, pos, enc, body_vaddr)
    # pc_range uses the same value format but is never relocated
    size_enc = PointerEncoding(enc.raw & 0x0F)
    pc_range, pos = read_encoded(body, pos, size_enc, 0)
    lsda = None
    if cie.augmentation.startswith("z"):
        aug_len, pos = read_uleb128(body, pos)
        aug_end = pos + aug_len
        if "L" in cie.augmentation and not cie.lsda_encoding.omitted and aug_len:
            lsda, _ = read_encoded(body, pos, cie.lsda_encoding, body_vaddr + pos)
        pos = aug_end
    if pc_range <= 0:
        diags.append(f"FDE at +0x{offset:x}: non-positive pc_range {pc_range}")
    return Fde(
        offset_in_section=offset,
        cie=cie,
        pc_begin=pc_begin,
        pc_range=pc_range,
        cfi_bytes=body[pos:],
        lsda=lsda,
    )


def _record_overlaps(result: EhFrameResult) -> None:
    ordered = sorted(result.fdes, key=lambda f: f.pc_begin)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.pc_begin < prev.pc_end:
            result.diagnostics.append(
                f"FDE pc ranges overlap: [0x{prev.pc_begin:x},0x{prev.pc_end:x}) and "
                f"[0x{cur.pc_begin:x},0x{cur.pc_end:x})")


def _crosscheck_hdr(img: BinaryImage, result: EhFrameResult) -> None:
    """Compare the .eh_frame_hdr search table against parsed FDEs (advisory)."""
    sec = img.section_by_name(".eh_frame_hdr")
    if sec is None or sec.size < 8:
        return
    data = img.read_bytes(sec.vaddr, sec.size)
    version = data[0]
    if version != 1:
        result.diagnostics.append(f".eh_frame_hdr version {version} not checked")
        return
    frame_ptr_enc = PointerEncoding(data[1])
    count_enc = PointerEncoding(data[2])
    table_enc = PointerEncoding(data[3])
    pos = 4
    try:
        if not frame_ptr_enc.omitted:
            _, pos = read_encoded(data, pos, frame_ptr_enc, sec.vaddr + pos)
        if count_enc.omitted:
            return
        count, pos = read_encoded(data, pos, count_enc, sec.vaddr + pos)
    except (ValueError, KeyError):
        result.diagnostics.append(".eh_frame_hdr: unparsable header")
        return
    if count != len(result.fdes):
        result.diagnostics.append(
            f".eh_frame_hdr table lists {count} FDEs, parser found {len(result.fdes)}")
        return
    # Spot-check the start addresses when the usual datarel sdata4 table is used.
    if table_enc.raw == 0x3B and count:
        starts = set()
        try:
            for _ in range(count):
                init, pos = read_encoded(data, pos, PointerEncoding(0x0B), 0)
                _, pos = read_encoded(data, pos, PointerEncoding(0x0B), 0)
                starts.add((init + sec.vaddr) & 0xFFFFFFFFFFFFFFFF)
        except ValueError:
            result.diagnostics.append(".eh_frame_hdr: truncated table")
            return
        if starts != {f.pc_begin for f in result.fdes}:
            result.diagnostics.append(
                ".eh_frame_hdr start addresses disagree with parsed FDEs")


def fde_starts(fdes: list[Fde]) -> list[int]:
    """Deduplicated, sorted pc_begin values; the stage-1 candidate starts."""
    return sorted({f.pc_begin for f in fdes})
