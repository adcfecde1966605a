"""Basic-block segmentation and control-flow graph construction."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from snipcheck.evm.disasm import Instruction

# stack-effect tracking window used by static jump resolution
RESOLVE_WINDOW = 32


class Terminator(str, enum.Enum):
    JUMP = "Jump"
    JUMPI = "JumpI"
    STOP = "Stop"
    RETURN = "Return"
    REVERT = "Revert"
    INVALID = "Invalid"
    SELFDESTRUCT = "SelfDestruct"
    FALLTHROUGH = "FallThrough"


_TERMINATOR_OF = {
    "JUMP": Terminator.JUMP,
    "JUMPI": Terminator.JUMPI,
    "STOP": Terminator.STOP,
    "RETURN": Terminator.RETURN,
    "REVERT": Terminator.REVERT,
    "INVALID": Terminator.INVALID,
    "SELFDESTRUCT": Terminator.SELFDESTRUCT,
}


class EdgeKind(str, enum.Enum):
    JUMP = "jump"
    BRANCH_TRUE = "branch_true"
    BRANCH_FALSE = "branch_false"
    FALLTHROUGH = "fallthrough"
    UNRESOLVED = "unresolved"
    # added after symbolic execution: call site -> return continuation
    CALL_SUMMARY = "call_summary"
    # added after symbolic execution: a dynamically resolved jump
    DYNAMIC = "dynamic"


@dataclass(frozen=True, slots=True)
class Edge:
    src: int
    dst: int | None  # None only for UNRESOLVED
    kind: EdgeKind


@dataclass(frozen=True)
class BasicBlock:
    id: int
    instructions: tuple[Instruction, ...]
    terminator: Terminator

    @property
    def start_pc(self) -> int:
        return self.instructions[0].pc

    @property
    def end_pc(self) -> int:
        """pc one past the last byte of the block."""
        last = self.instructions[-1]
        return last.pc + last.size

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]

    def opcodes(self) -> list[str]:
        return [ins.name for ins in self.instructions]


@dataclass(frozen=True)
class Cfg:
    blocks: dict[int, BasicBlock]
    edges: tuple[Edge, ...]
    entry_id: int | None
    diagnostics: tuple[str, ...] = ()
    _succ: dict[int, list[Edge]] = field(default_factory=dict, repr=False, compare=False)
    _pred: dict[int, list[Edge]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        for bid in self.blocks:
            self._succ[bid] = []
            self._pred[bid] = []
        for e in self.edges:
            self._succ[e.src].append(e)
            if e.dst is not None:
                self._pred[e.dst].append(e)

    def successors(self, block_id: int) -> list[int]:
        return [e.dst for e in self._succ[block_id] if e.dst is not None]

    def predecessors(self, block_id: int) -> list[int]:
        return [e.src for e in self._pred[block_id]]

    def out_edges(self, block_id: int) -> list[Edge]:
        return list(self._succ[block_id])

    def block_at(self, pc: int) -> BasicBlock | None:
        return self.blocks.get(pc)

    def block_containing(self, pc: int) -> BasicBlock:
        return self.blocks[self.pc_to_block[pc]]

    @property
    def pc_to_block(self) -> dict[int, int]:
        table = self.__dict__.get("_pc_table")
        if table is None:
            table = {ins.pc: b.id for b in self.blocks.values() for ins in b.instructions}
            object.__setattr__(self, "_pc_table", table)
        return table

    def instructions(self) -> list[Instruction]:
        return [ins for bid in sorted(self.blocks) for ins in self.blocks[bid].instructions]

    def with_edges(self, extra: Iterable[Edge]) -> Cfg:
        """Copy of this graph with ``extra`` edges added (duplicates dropped)."""
        seen = set(self.edges)
        merged = list(self.edges)
        for e in extra:
            if e not in seen and e.src in self.blocks and e.dst in self.blocks:
                seen.add(e)
                merged.append(e)
        return Cfg(dict(self.blocks), tuple(merged), self.entry_id, self.diagnostics)

    def to_dot(self, name: str = "cfg") -> str:
        lines = [f"digraph {name} {{", "  node [shape=box fontname=monospace];"]
        for bid in sorted(self.blocks):
            body = "\\l".join(str(ins) for ins in self.blocks[bid].instructions)
            lines.append(f'  b{bid} [label="{body}\\l"];')
        for k, e in enumerate(self.edges):
            if e.dst is None:
                lines.append(f'  u{k} [shape=point]; b{e.src} -> u{k} [style=dashed label="?"];')
            else:
                lines.append(f'  b{e.src} -> b{e.dst} [label="{e.kind.value}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _leaders(instructions: Sequence[Instruction]) -> set[int]:
    leaders = {0} if instructions else set()
    for i, ins in enumerate(instructions):
        if ins.name == "JUMPDEST":
            leaders.add(i)
        if ins.name in _TERMINATOR_OF and i + 1 < len(instructions):
            leaders.add(i + 1)
    return leaders


def segment(instructions: Sequence[Instruction]) -> list[BasicBlock]:
    """Split the instruction list into basic blocks.

    Leaders are the first instruction, every JUMPDEST and every instruction
    following a terminator.
    """
    leaders = sorted(_leaders(instructions))
    blocks = []
    for k, start in enumerate(leaders):
        end = leaders[k + 1] if k + 1 < len(leaders) else len(instructions)
        body = tuple(instructions[start:end])
        term = _TERMINATOR_OF.get(body[-1].name, Terminator.FALLTHROUGH)
        blocks.append(BasicBlock(body[0].pc, body, term))
    return blocks


def static_jump_target(block: BasicBlock, window: int = RESOLVE_WINDOW) -> int | None:
    """Constant-propagate stack effects over the last ``window`` instructions
    before the block's jump; return the target when it is a known constant."""
    body = block.instructions[:-1]
    body = body[max(0, len(body) - window) :]
    # abstract stack; None = unknown.  Grows downward with unknowns on demand.
    stack: list[int | None] = []

    def pop() -> int | None:
        return stack.pop() if stack else None

    for ins in body:
        name = ins.name
        op = ins.op
        if name.startswith("PUSH"):
            stack.append(ins.push_value)
        elif name.startswith("DUP"):
            n = op.pops
            while len(stack) < n:
                stack.insert(0, None)
            stack.append(stack[-n])
        elif name.startswith("SWAP"):
            n = op.pops - 1
            while len(stack) < n + 1:
                stack.insert(0, None)
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        else:
            for _ in range(op.pops):
                pop()
            for _ in range(op.pushes):
                stack.append(None)
    return pop()


def build_cfg(instructions: Sequence[Instruction]) -> Cfg:
    """Build the control-flow graph.

    Jumps whose target is a constant within the resolution window get a
    ``jump``/``branch_true`` edge; others get an ``unresolved`` edge that
    symbolic execution can refine later.  Targets that are not JUMPDESTs are
    dropped with a diagnostic.
    """
    blocks = segment(instructions)
    by_id = {b.id: b for b in blocks}
    edges: list[Edge] = []
    diagnostics: list[str] = []
    for k, block in enumerate(blocks):
        nxt = blocks[k + 1].id if k + 1 < len(blocks) else None
        term = block.terminator
        if term in (Terminator.JUMP, Terminator.JUMPI):
            target = static_jump_target(block)
            kind = EdgeKind.JUMP if term is Terminator.JUMP else EdgeKind.BRANCH_TRUE
            if target is None:
                edges.append(Edge(block.id, None, EdgeKind.UNRESOLVED))
            elif target in by_id and by_id[target].instructions[0].name == "JUMPDEST":
                edges.append(Edge(block.id, target, kind))
            else:
                diagnostics.append(
                    f"jump at {block.last.pc:#x} targets {target:#x}, which is not a JUMPDEST"
                )
            if term is Terminator.JUMPI and nxt is not None:
                edges.append(Edge(block.id, nxt, EdgeKind.BRANCH_FALSE))
        elif term is Terminator.FALLTHROUGH and nxt is not None:
            edges.append(Edge(block.id, nxt, EdgeKind.FALLTHROUGH))
    entry = blocks[0].id if blocks else None
    return Cfg(by_id, tuple(edges), entry, tuple(diagnostics))
