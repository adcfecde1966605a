"""Linear-sweep disassembly of EVM runtime bytecode."""

from __future__ import annotations

from dataclasses import dataclass

from snipcheck.evm.opcodes import OpInfo, lookup

# CBOR map headers with 1..5 entries; solc metadata is always a small map.
_CBOR_MAP_HEADERS = range(0xA1, 0xA6)


@dataclass(frozen=True, slots=True)
class Instruction:
    pc: int
    op: OpInfo
    push_data: bytes | None = None
    truncated: bool = False
    source_range: tuple[int, int] | None = None
    # bytes actually consumed; short for a truncated PUSH
    size: int = 1

    @property
    def name(self) -> str:
        return self.op.name

    @property
    def push_value(self) -> int | None:
        if self.push_data is None:
            return None
        return int.from_bytes(self.push_data, "big") if self.push_data else 0

    def __str__(self) -> str:
        if self.push_data is not None and self.op.push_width:
            return f"{self.pc:#06x} {self.name} 0x{self.push_data.hex()}"
        return f"{self.pc:#06x} {self.name}"


def as_bytes(code: bytes | str) -> bytes:
    if isinstance(code, bytes):
        return code
    text = code.strip()
    if text.startswith(("0x", "0X")):
        text = text[2:]
    return bytes.fromhex(text)


def metadata_length(code: bytes) -> int:
    """Length of the compiler's CBOR metadata trailer at the end of ``code``
    (including the two length bytes), or 0 when none is present."""
    if len(code) < 4:
        return 0
    cbor_len = int.from_bytes(code[-2:], "big")
    start = len(code) - 2 - cbor_len
    if cbor_len == 0 or start < 0:
        return 0
    if code[start] not in _CBOR_MAP_HEADERS:
        return 0
    # every solc trailer carries one of these keys as its first text key
    body = code[start : len(code) - 2]
    if not any(key in body for key in (b"bzzr0", b"bzzr1", b"ipfs", b"solc", b"experimental")):
        return 0
    return cbor_len + 2


def strip_metadata(code: bytes) -> bytes:
    """Drop the metadata trailer and the single INVALID byte solc emits to
    separate it from code (that byte has no source map entry)."""
    n = metadata_length(code)
    if not n:
        return code
    end = len(code) - n
    if end > 0 and code[end - 1] == 0xFE:
        end -= 1
    return code[:end]


def disassemble(code: bytes | str, *, strip_trailer: bool = True) -> list[Instruction]:
    """Decode ``code`` into instructions.

    PUSHn consumes n immediate bytes; a PUSH running off the end is zero-padded
    to its full width and marked ``truncated``.  Unassigned bytes decode as
    INVALID.  The compiler metadata trailer is skipped unless
    ``strip_trailer`` is false.
    """
    raw = as_bytes(code)
    if strip_trailer:
        raw = strip_metadata(raw)
    out: list[Instruction] = []
    pc = 0
    n = len(raw)
    while pc < n:
        info = lookup(raw[pc])
        width = info.push_width
        if info.name == "PUSH0":
            out.append(Instruction(pc, info, b""))
        elif width:
            data = raw[pc + 1 : pc + 1 + width]
            truncated = len(data) < width
            if truncated:
                data = data + bytes(width - len(data))
            out.append(Instruction(pc, info, data, truncated, size=min(1 + width, n - pc)))
        else:
            out.append(Instruction(pc, info))
        pc += 1 + width
    return out
