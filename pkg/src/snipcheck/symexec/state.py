"""Symbolic machine state: stack, memory, storage, constraints, events."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import z3

from snipcheck.symexec.values import EMPTY, Term, Value, byte_of, concat_bytes, to_z3

MAX_STACK = 1024


class Termination(str, enum.Enum):
    STOP = "Stop"
    RETURN = "Return"
    REVERT = "Revert"
    INVALID = "Invalid"
    DEPTH_LIMIT = "DepthLimit"
    LOOP_LIMIT = "LoopLimit"
    TIMEOUT = "Timeout"

    @property
    def normal(self) -> bool:
        """Effects of the transaction persist."""
        return self in (Termination.STOP, Termination.RETURN)


def term_key(term: Term) -> int | str:
    """Hashable identity for a storage key: the int itself, or a digest of the
    simplified expression (z3 terms are hash-consed, so equal structure means
    equal text)."""
    if isinstance(term, int):
        return term
    s = z3.simplify(term)
    if z3.is_bv_value(s):
        return s.as_long()
    return "t" + hashlib.sha1(s.sexpr().encode()).hexdigest()[:16]


def slot_tag(key: int | str) -> str:
    return f"slot:{key:#x}" if isinstance(key, int) else f"slot:{key}"


# ------------------------------------------------------------------ events


@dataclass(frozen=True, slots=True)
class CallEvent:
    step: int
    pc: int
    op: str
    gas: Value
    to: Value
    value: Value | None
    result: Value
    tag: str  # taint tag unique to this call's success flag


@dataclass(frozen=True, slots=True)
class StoreEvent:
    step: int
    pc: int
    key: Value
    slot: int | str
    value: Value


@dataclass(frozen=True, slots=True)
class LoadEvent:
    step: int
    pc: int
    key: Value
    slot: int | str
    value: Value


@dataclass(frozen=True, slots=True)
class BranchEvent:
    step: int
    pc: int
    cond: Value
    taken: bool
    constraint_index: int


@dataclass(frozen=True, slots=True)
class ArithEvent:
    step: int
    pc: int
    op: str
    a: Value
    b: Value
    result: Value
    constraint_index: int


@dataclass(frozen=True, slots=True)
class CompareEvent:
    step: int
    pc: int
    op: str
    a: Value
    b: Value
    result: Value


@dataclass(frozen=True, slots=True)
class SelfDestructEvent:
    step: int
    pc: int
    beneficiary: Value


@dataclass(frozen=True, slots=True)
class Constraint:
    cond: z3.BoolRef
    taint: frozenset[str]
    pc: int


# ------------------------------------------------------------------ memory


class Memory:
    """Byte-addressed memory.

    Each byte cell holds ``(word, index)``: byte ``index`` of a 256-bit Value.
    A load that lines up exactly with one earlier 32-byte store returns that
    Value untouched, so no extract/concat terms are built on the common path.
    """

    __slots__ = ("cells", "size")

    def __init__(self) -> None:
        self.cells: dict[int, tuple[Value, int]] = {}
        self.size = 0

    def copy(self) -> Memory:
        m = Memory.__new__(Memory)
        m.cells = dict(self.cells)
        m.size = self.size
        return m

    def _touch(self, offset: int, length: int) -> None:
        if length:
            end = offset + length
            words = (end + 31) // 32
            self.size = max(self.size, words * 32)

    def store_word(self, offset: int, value: Value) -> None:
        for i in range(32):
            self.cells[offset + i] = (value, i)
        self._touch(offset, 32)

    def store_byte(self, offset: int, value: Value) -> None:
        self.cells[offset] = (value, 31)
        self._touch(offset, 1)

    def store_cell(self, offset: int, cell: tuple[Value, int]) -> None:
        self.cells[offset] = cell
        self._touch(offset, 1)

    def load_bytes(self, offset: int, length: int) -> tuple[list[Term], frozenset[str]]:
        parts: list[Term] = []
        taint: set[str] = set()
        zero = (Value(0), 31)
        for i in range(length):
            word, idx = self.cells.get(offset + i, zero)
            parts.append(byte_of(word.term, idx))
            taint |= word.taint
        return parts, frozenset(taint)

    def load_word(self, offset: int) -> Value:
        self._touch(offset, 32)
        first = self.cells.get(offset)
        if first is not None and first[1] == 0:
            word = first[0]
            cells = self.cells
            if all(
                (c := cells.get(offset + i)) is not None and c[0] is word and c[1] == i
                for i in range(1, 32)
            ):
                return Value(word.term, word.taint)
        parts, taint = self.load_bytes(offset, 32)
        return Value(concat_bytes(parts), taint)


# ------------------------------------------------------------------ state


@dataclass
class SymState:
    block: int
    stack: list[Value] = field(default_factory=list)
    memory: Memory = field(default_factory=Memory)
    storage: dict[int | str, tuple[Value, Value]] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)
    trace: list[tuple[int, str]] = field(default_factory=list)
    blocks: list[int] = field(default_factory=list)
    events: list = field(default_factory=list)
    edge_counts: dict[tuple[int, int], int] = field(default_factory=dict)
    keccak_apps: list[tuple[int, z3.BitVecRef, z3.BitVecRef]] = field(default_factory=list)
    returndata_size: Value = field(default_factory=lambda: Value(0))
    function: int | None = None  # dispatcher selector taken on this path
    function_entry: int | None = None  # pc the dispatcher jumped to
    call_count: int = 0
    fresh_count: int = 0

    def fork(self) -> SymState:
        return SymState(
            block=self.block,
            stack=list(self.stack),
            memory=self.memory.copy(),
            storage=dict(self.storage),
            constraints=list(self.constraints),
            trace=list(self.trace),
            blocks=list(self.blocks),
            events=list(self.events),
            edge_counts=dict(self.edge_counts),
            keccak_apps=list(self.keccak_apps),
            returndata_size=self.returndata_size,
            function=self.function,
            function_entry=self.function_entry,
            call_count=self.call_count,
            fresh_count=self.fresh_count,
        )

    @property
    def step(self) -> int:
        return len(self.trace)

    def path_condition(self) -> list[z3.BoolRef]:
        return [c.cond for c in self.constraints]

    def constraint_taint(self) -> frozenset[str]:
        out: set[str] = set()
        for c in self.constraints:
            out |= c.taint
        return frozenset(out)

    def fresh(self, prefix: str, taint: frozenset[str] = EMPTY) -> Value:
        self.fresh_count += 1
        return Value(z3.BitVec(f"{prefix}_{self.fresh_count}", 256), taint)

    def final_storage(self) -> dict[int | str, Term]:
        return {k: v.term for k, (_, v) in self.storage.items()}


def z3_word(v: Value) -> z3.BitVecRef:
    return to_z3(v.term)
