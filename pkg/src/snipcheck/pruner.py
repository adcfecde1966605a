"""Restrict a compiled contract's CFG to the code that came from the snippet.

Names declared in the snippet are matched against the compiler's AST; the
matched definitions' subtrees give source ranges, and a block is retained
when its instructions map into those ranges.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field

from snipcheck.evm.cfg import BasicBlock, Cfg
from snipcheck.evm.disasm import Instruction
from snipcheck.solc import AstNode, BridgeError, CompileOutput, SourceMapEntry

logger = logging.getLogger(__name__)

DRIFT_THRESHOLD = 0.5

_IDENT = re.compile(r"^[A-Za-z_$][A-Za-z0-9_$]*$")


@dataclass(frozen=True)
class SnippetInfo:
    function_names: frozenset[str] = frozenset()
    contract_names: frozenset[str] = frozenset()
    modifier_names: frozenset[str] = frozenset()
    event_names: frozenset[str] = frozenset()
    state_var_names: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        for name in self.all_names():
            if not _IDENT.match(name):
                raise ValueError(f"not a Solidity identifier: {name!r}")

    def all_names(self) -> frozenset[str]:
        return (self.function_names | self.contract_names | self.modifier_names
                | self.event_names | self.state_var_names)

    @property
    def empty(self) -> bool:
        return not self.all_names()

    @property
    def anchors(self) -> frozenset[str]:
        return self.function_names | self.contract_names


_STRIP = re.compile(r"//[^\n]*|/\*.*?\*/|\"(?:\\.|[^\"\\\n])*\"|'(?:\\.|[^'\\\n])*'", re.S)
_NAMED = {
    "function": re.compile(r"\bfunction\s+([A-Za-z_$][\w$]*)"),
    "contract": re.compile(r"\b(?:contract|library|interface)\s+([A-Za-z_$][\w$]*)"),
    "modifier": re.compile(r"\bmodifier\s+([A-Za-z_$][\w$]*)"),
    "event": re.compile(r"\bevent\s+([A-Za-z_$][\w$]*)"),
}
_STATE_DECL = re.compile(
    r"^\s*(?:u?int\d*|bytes\d*|address(?:\s+payable)?|bool|string|byte|[A-Z][\w$]*"
    r"|mapping\s*\((?:[^()]|\([^()]*\))*\))"
    r"(?:\s*\[[^\]]*\])*"
    r"(?:\s+(?:public|private|internal|constant|immutable|override|payable))*"
    r"\s+([A-Za-z_$][\w$]*)\s*(?:=[^;]*)?;",
    re.M,
)


def _blank(text: str) -> str:
    return _STRIP.sub(lambda m: re.sub(r"[^\n]", " ", m.group(0)), text)


def _member_level_lines(code: str, level: int) -> str:
    """Only the characters at brace depth ``level``; deeper text is blanked."""
    out = []
    depth = 0
    for ch in code:
        if ch == "{":
            out.append(ch if depth == level else " ")
            depth += 1
        elif ch == "}":
            depth -= 1
            out.append(ch if depth == level else " ")
        else:
            out.append(ch if depth == level or ch == "\n" else " ")
    return "".join(out)


def extract_info(snippet: str) -> SnippetInfo:
    """Declared names in ``snippet``, ignoring comments and strings."""
    if not snippet.strip():
        raise ValueError("snippet is empty")
    code = _blank(snippet)
    found = {k: frozenset(rx.findall(code)) for k, rx in _NAMED.items()}
    level = 1 if found["contract"] else 0
    states = frozenset(_STATE_DECL.findall(_member_level_lines(code, level)))
    return SnippetInfo(found["function"], found["contract"], found["modifier"], found["event"], states)


# ------------------------------------------------------------------ pruning


class FailureReason(str, enum.Enum):
    INSUFFICIENT_INFO = "InsufficientInfo"
    COMPLETION_DRIFT = "CompletionDrift"


@dataclass(frozen=True)
class PruneFailure:
    reason: FailureReason
    detail: str

    def status(self) -> str:
        return f"failed:{self.reason.value}"


@dataclass(frozen=True)
class PrunedAst:
    subgraphs: tuple[AstNode, ...]
    merged: tuple[AstNode, ...]

    def ranges(self) -> list[tuple[int, int]]:
        """Merged (start, end) spans, overlaps coalesced."""
        spans = sorted((n.start, n.end) for n in self.subgraphs)
        out: list[tuple[int, int]] = []
        for a, b in spans:
            if out and a <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], b))
            else:
                out.append((a, b))
        return out


@dataclass(frozen=True)
class PrunedCfg:
    base: Cfg
    retained_block_ids: frozenset[int]
    anchor_map: dict[int, tuple[int, int]] = field(default_factory=dict)
    ast: PrunedAst | None = None

    def retains(self, block_id: int) -> bool:
        return block_id in self.retained_block_ids


_KIND_FIELD = {
    "FunctionDefinition": "function_names",
    "ContractDefinition": "contract_names",
    "ModifierDefinition": "modifier_names",
    "EventDefinition": "event_names",
}


def _node_matches(node: AstNode, info: SnippetInfo) -> bool:
    if not node.name:
        return False
    field_name = _KIND_FIELD.get(node.kind)
    if field_name is None:
        if node.kind == "VariableDeclaration" and node.attrs.get("stateVariable"):
            field_name = "state_var_names"
        else:
            return False
    return node.name in getattr(info, field_name)


def match_ast(ast: AstNode, info: SnippetInfo) -> PrunedAst:
    """Subtrees of definitions named in ``info``; nested matches merge into
    their enclosing match."""
    subgraphs: list[AstNode] = []
    stack = [ast]
    while stack:
        node = stack.pop()
        if _node_matches(node, info):
            subgraphs.append(node)
            # a contract match still lets inner names count as found
        stack.extend(reversed(node.children))
    subgraphs.sort(key=lambda n: n.src)
    merged: dict[tuple[str, tuple[int, int]], AstNode] = {}
    for sub in subgraphs:
        for n in sub.walk():
            merged.setdefault((n.kind, n.src), n)
    return PrunedAst(tuple(subgraphs), tuple(merged.values()))


def annotate(instructions: Sequence[Instruction], source_map: Sequence[SourceMapEntry]) -> list[Instruction]:
    """Attach source ranges (in-file entries only) to ``instructions``."""
    # the byte solc puts before the metadata trailer (INVALID, or STOP before
    # 0.5) has no entry
    separator = len(instructions) == len(source_map) + 1 and instructions[-1].op.name in ("INVALID", "STOP")
    if len(source_map) != len(instructions) and not separator:
        logger.warning("source map has %d entries for %d instructions", len(source_map), len(instructions))
    out = []
    for k, ins in enumerate(instructions):
        entry = source_map[k] if k < len(source_map) else None
        rng = (entry.offset, entry.length) if entry is not None and entry.in_source else None
        out.append(dataclasses.replace(ins, source_range=rng))
    return out


def _anchor(ins: Instruction, ranges: list[tuple[int, int]]) -> tuple[int, int] | None:
    """The merged span this instruction anchors to.  An instruction whose own
    range strictly encloses the span (contract-wide dispatch code seen from a
    single function) does not anchor."""
    if ins.source_range is None:
        return None
    s, length = ins.source_range
    e = s + length
    for a, b in ranges:
        if s < b and a < e or (length == 0 and a <= s < b):
            if s <= a and b <= e and (s, e) != (a, b):
                continue
            return (a, b)
    return None


def prune(output: CompileOutput, info: SnippetInfo, cfg: Cfg) -> PrunedCfg | PruneFailure:
    """Keep the blocks of ``cfg`` whose code comes from definitions named in
    ``info``.  ``cfg`` must carry source ranges (see :func:`annotate`)."""
    if output.ast is None:
        raise BridgeError("compile output has no AST")
    if cfg.blocks and not any(i.source_range for b in cfg.blocks.values() for i in b.instructions):
        raise BridgeError("no instruction carries a source range; is the source map missing?")
    if info.empty:
        return PruneFailure(FailureReason.INSUFFICIENT_INFO, "snippet declares no names")
    pruned_ast = match_ast(output.ast, info)
    names_in_ast = {n.name for n in pruned_ast.subgraphs}
    anchors = info.anchors
    if anchors:
        found = anchors & names_in_ast
        if len(found) < DRIFT_THRESHOLD * len(anchors):
            missing = ", ".join(sorted(anchors - found))
            return PruneFailure(FailureReason.COMPLETION_DRIFT,
                                f"{len(found)}/{len(anchors)} snippet anchors found; missing {missing}")
    if not pruned_ast.subgraphs:
        return PruneFailure(FailureReason.INSUFFICIENT_INFO, "no snippet name matches the compiled AST")
    ranges = pruned_ast.ranges()
    whole = _whole_program(output, pruned_ast)
    retained: set[int] = set()
    anchor_map: dict[int, tuple[int, int]] = {}
    for bid, block in cfg.blocks.items():
        hit = _block_anchor(block, ranges)
        if hit is not None:
            retained.add(bid)
            anchor_map[bid] = hit
        elif whole and not any(i.source_range for i in block.instructions):
            # compiler-generated code of a contract the snippet defines
            retained.add(bid)
    return PrunedCfg(cfg, frozenset(retained), anchor_map, pruned_ast)


def _block_anchor(block: BasicBlock, ranges: list[tuple[int, int]]) -> tuple[int, int] | None:
    for ins in block.instructions:
        hit = _anchor(ins, ranges)
        if hit is not None:
            return hit
    return None


def _whole_program(output: CompileOutput, pruned: PrunedAst) -> bool:
    return any(n.kind == "ContractDefinition" and n.name == output.primary for n in pruned.subgraphs)
