"""ULEB128 / SLEB128 decoding used by the exception-frame parser."""

from __future__ import annotations


def read_uleb128(data: bytes, pos: int) -> tuple[int, int]:
    """Decode an unsigned LEB128 at pos; returns (value, new_pos)."""
    value = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise ValueError("ULEB128 runs past end of buffer")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            return value, pos


def read_sleb128(data: bytes, pos: int) -> tuple[int, int]:
    """Decode a signed LEB128 at pos; returns (value, new_pos)."""
    value = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise ValueError("SLEB128 runs past end of buffer")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            if byte & 0x40:
                value -= 1 << shift
            return value, pos


def encode_uleb128(value: int) -> bytes:
    if value < 0:
        raise ValueError("ULEB128 cannot encode negative values")
    out = bytearray()
    while True:
        piece = value & 0x7F
        value >>= 7
        if value:
            out.append(piece | 0x80)
        else:
            out.append(piece)
            return bytes(out)


def encode_sleb128(value: int) -> bytes:
    out = bytearray()
    while True:
        piece = value & 0x7F
        value >>= 7
        done = (value == 0 and not piece & 0x40) or (value == -1 and piece & 0x40)
        out.append(piece if done else piece | 0x80)
        if done:
            return bytes(out)
