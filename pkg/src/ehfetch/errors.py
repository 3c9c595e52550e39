"""Exception types shared across the toolkit."""


class EhFetchError(Exception):
    """Base class for all errors raised by this package."""


class NotElf(EhFetchError):
    """The input file is not an ELF object."""


class UnsupportedArch(EhFetchError):
    """The ELF is not a 64-bit little-endian x86-64 binary."""


class Truncated(EhFetchError):
    """A header or section extends past the end of the file."""


class OutOfRange(EhFetchError):
    """A virtual address is not mapped by any allocated section."""


class MissingEhFrame(EhFetchError):
    """The binary carries no .eh_frame section."""


class MalformedEntry(EhFetchError):
    """An .eh_frame entry could not be decoded."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"malformed entry at +0x{offset:x}: {reason}")
        self.offset = offset
        self.reason = reason


class CfiDecodeError(EhFetchError):
    """A call-frame instruction operand ran past its block."""

    def __init__(self, offset: int):
        super().__init__(f"CFI operand truncated at +0x{offset:x}")
        self.offset = offset


class AddressOutOfFde(EhFetchError):
    """Queried address falls outside the FDE's pc range."""


class InvalidOpcode(EhFetchError):
    """Bytes at the address do not decode to an instruction."""

    def __init__(self, addr: int):
        super().__init__(f"invalid opcode at 0x{addr:x}")
        self.addr = addr


class SliceEscapesFunction(EhFetchError):
    """A backward slice needs a definition from outside the function."""
