"""Vulnerability patterns over explored paths, the CFG and its loops."""

from __future__ import annotations

import enum
import logging
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import z3

from snipcheck.evm.cfg import Cfg
from snipcheck.evm.loops import Loop
from snipcheck.evm.opcodes import CALL_FAMILY
from snipcheck.pruner import PrunedCfg
from snipcheck.solc import AstNode, parse_version
from snipcheck.symexec import values as V
from snipcheck.symexec.engine import PathResult
from snipcheck.symexec.solver import Status, solve
from snipcheck.symexec.state import (
    ArithEvent,
    BranchEvent,
    CallEvent,
    CompareEvent,
    LoadEvent,
    SelfDestructEvent,
    StoreEvent,
)

logger = logging.getLogger(__name__)

STIPEND = 2300
TRACE_EXCERPT = 16


class VulnKind(str, enum.Enum):
    RE = "RE"    # reentrancy
    AC = "AC"    # access control
    AI = "AI"    # arithmetic over/underflow
    URV = "URV"  # unchecked return value
    DoS = "DoS"  # denial of service
    BR = "BR"    # bad randomness
    FR = "FR"    # front running
    TM = "TM"    # time manipulation
    SAA = "SAA"  # short address attack


class Confidence(str, enum.Enum):
    PRUNED = "pruned"
    UNPRUNED = "unpruned"


@dataclass(frozen=True)
class Finding:
    kind: VulnKind
    pc: int
    source_range: tuple[int, int] | None
    block_ids: tuple[int, ...]
    message: str
    witness: Mapping[str, Any] | None = None
    confidence: Confidence = Confidence.PRUNED
    certainty: str = "high"

    @property
    def start(self) -> int:
        return self.source_range[0] if self.source_range else -1

    def sort_key(self) -> tuple[str, int, int]:
        return (self.kind.value, self.start, self.pc)


@dataclass
class DetectionResult:
    findings: list[Finding]
    diagnostics: list[str] = field(default_factory=list)

    def kinds(self) -> set[VulnKind]:
        return {f.kind for f in self.findings}


_ARITH_OPERATORS = {
    "ADD": {"+", "+=", "++"},
    "SUB": {"-", "-=", "--"},
    "MUL": {"*", "*="},
}


class Context:
    """Shared, read-only inputs for every pattern, plus per-path caches."""

    def __init__(
        self,
        paths: Sequence[PathResult],
        cfg: Cfg,
        loops: Sequence[Loop],
        compiler_version: str | None,
        ast: AstNode | None,
        method_identifiers: Mapping[str, str] | None,
        query_timeout_ms: int,
    ) -> None:
        self.paths = paths
        self.cfg = cfg
        self.loops = loops
        self.version = parse_version(compiler_version) if compiler_version else None
        self.ast = ast
        self.methods = {int(sel, 16): sig for sig, sel in (method_identifiers or {}).items()}
        self.timeout_ms = query_timeout_ms
        self.ins_at = {i.pc: i for i in cfg.instructions()}
        self._sat: dict[int, bool] = {}
        self._arith_nodes: dict[tuple[int, int], set[str]] | None = None
        self._unchecked: list[tuple[int, int]] = []

    # paths ---------------------------------------------------------------
    def normal(self) -> Iterable[PathResult]:
        return (p for p in self.paths if p.termination.normal)

    def sat(self, path: PathResult) -> bool:
        key = id(path)
        if key not in self._sat:
            verdict = solve(path.state.path_condition(), timeout_ms=self.timeout_ms)
            self._sat[key] = verdict.status is Status.SAT
        return self._sat[key]

    def feasible_normal(self) -> Iterable[PathResult]:
        return (p for p in self.normal() if self.sat(p))

    # source --------------------------------------------------------------
    def source_of(self, pc: int) -> tuple[int, int] | None:
        ins = self.ins_at.get(pc)
        if ins is None:
            return None
        if ins.source_range is not None:
            return ins.source_range
        block = self.cfg.blocks.get(self.cfg.pc_to_block.get(pc, -1))
        if block is not None:
            for other in reversed(block.instructions):
                if other.pc < pc and other.source_range is not None:
                    return other.source_range
        return None

    def user_guard(self, pc: int) -> bool:
        """A JUMPI written in the source rather than compiler-generated."""
        ins = self.ins_at.get(pc)
        return ins is not None and (ins.source_range is not None or self.ast is None)

    def block_of(self, pc: int) -> int | None:
        return self.cfg.pc_to_block.get(pc)

    # AST -----------------------------------------------------------------
    def arithmetic_site(self, op: str, pc: int) -> bool | None:
        """True/False when the AST can say whether ``pc`` implements a source
        arithmetic operator; None without an AST."""
        if self.ast is None:
            return None
        if self._arith_nodes is None:
            self._arith_nodes = {}
            for n in self.ast.walk():
                if n.kind in ("BinaryOperation", "Assignment", "UnaryOperation"):
                    operator = n.attrs.get("operator")
                    if isinstance(operator, str):
                        self._arith_nodes.setdefault(n.src, set()).add(operator)
                elif n.kind == "UncheckedBlock":
                    self._unchecked.append((n.start, n.end))
        rng = self.source_of(pc)
        if rng is None:
            return False
        return bool(self._arith_nodes.get(rng, set()) & _ARITH_OPERATORS[op])

    def in_unchecked(self, pc: int) -> bool:
        rng = self.source_of(pc)
        if rng is None:
            return False
        return any(a <= rng[0] and rng[0] + rng[1] <= b for a, b in self._unchecked)

    def checked_arithmetic(self) -> bool:
        return self.version is not None and self.version[:2] >= (0, 8)

    # findings ------------------------------------------------------------
    def finding(self, kind: VulnKind, pc: int, path: PathResult | None, message: str,
                model: Mapping[str, int] | None = None, certainty: str = "high",
                blocks: Iterable[int] | None = None) -> Finding:
        witness = None
        if path is not None:
            trace = path.state.trace
            upto = next((k for k, (p, _) in enumerate(trace) if p == pc), len(trace) - 1)
            excerpt = trace[max(0, upto - TRACE_EXCERPT + 1): upto + 1]
            witness = {
                "model": dict(sorted((model or {}).items())),
                "trace": [f"{p:#06x} {name}" for p, name in excerpt],
                "termination": path.termination.value,
            }
        block = self.block_of(pc)
        ids = tuple(sorted(set(blocks))) if blocks is not None else ((block,) if block is not None else ())
        return Finding(kind, pc, self.source_of(pc), ids, message, witness, certainty=certainty)


def _events(path: PathResult, kind: type) -> list:
    return [e for e in path.state.events if isinstance(e, kind)]


def _may_be_nonzero(v: V.Value | None) -> bool:
    if v is None:
        return False
    return not (isinstance(v.term, int) and v.term == 0)


# ------------------------------------------------------------------ patterns


def detect_reentrancy(ctx: Context) -> list[Finding]:
    """External call forwarding gas, then a write to storage read before it."""
    out = []
    for path in ctx.normal():
        loads = _events(path, LoadEvent)
        stores = _events(path, StoreEvent)
        for call in _events(path, CallEvent):
            gas = call.gas
            forwards = V.GAS in gas.taint or (isinstance(gas.term, int) and gas.term > STIPEND)
            if not forwards or call.op == "STATICCALL":
                continue
            read_before = {e.slot for e in loads if e.step < call.step}
            late = [s for s in stores if s.step > call.step and s.slot in read_before]
            if late and ctx.sat(path):
                out.append(ctx.finding(VulnKind.RE, call.pc, path,
                                       f"state written at pc {late[0].pc:#x} after external call"))
    return out


def _privileged_slots(ctx: Context) -> set[int]:
    """Concrete slots whose value is compared against msg.sender somewhere."""
    slots: set[int] = set()
    for path in ctx.paths:
        for e in _events(path, CompareEvent):
            if e.op != "EQ":
                continue
            for x, y in ((e.a, e.b), (e.b, e.a)):
                if V.CALLER in x.taint and V.CALLER not in y.taint:
                    for tag in y.taint:
                        if tag.startswith("slot:0x"):
                            slots.add(int(tag[5:], 16))
    return slots


def detect_access_control(ctx: Context) -> list[Finding]:
    out = []
    for path in ctx.paths:
        for b in _events(path, BranchEvent):
            if V.ORIGIN in b.cond.taint and ctx.user_guard(b.pc):
                out.append(ctx.finding(VulnKind.AC, b.pc, path, "tx.origin used for authorization"))
    privileged = _privileged_slots(ctx)
    for path in ctx.normal():
        if V.CALLER in path.state.constraint_taint():
            continue
        sites = [(e.pc, "selfdestruct reachable by any caller") for e in _events(path, SelfDestructEvent)]
        sites += [(e.pc, f"privileged slot {e.slot:#x} writable by any caller")
                  for e in _events(path, StoreEvent)
                  if isinstance(e.slot, int) and e.slot in privileged]
        if sites and ctx.sat(path):
            for pc, msg in sites:
                out.append(ctx.finding(VulnKind.AC, pc, path, msg))
    return out


def _overflow(op: str, a: z3.BitVecRef, b: z3.BitVecRef) -> z3.BoolRef:
    if op == "ADD":
        return z3.Not(z3.BVAddNoOverflow(a, b, False))
    if op == "SUB":
        return z3.Not(z3.BVSubNoUnderflow(a, b, False))
    return z3.Not(z3.BVMulNoOverflow(a, b, False))


def detect_arithmetic(ctx: Context) -> list[Finding]:
    out = []
    done: set[int] = set()
    checked = ctx.checked_arithmetic()
    for path in ctx.normal():
        conds = path.state.path_condition()
        for e in _events(path, ArithEvent):
            if e.pc in done:
                continue
            site = ctx.arithmetic_site(e.op, e.pc)
            if site is False:
                continue
            if checked and not ctx.in_unchecked(e.pc):
                continue
            a, b = e.a.z3(), e.b.z3()
            verdict = solve(conds, _overflow(e.op, a, b), timeout_ms=ctx.timeout_ms,
                            witness={"lhs": a, "rhs": b})
            if verdict.status is Status.SAT:
                done.add(e.pc)
                word = {"ADD": "overflow", "SUB": "underflow", "MUL": "overflow"}[e.op]
                out.append(ctx.finding(VulnKind.AI, e.pc, path, f"{e.op} can {word}", verdict.model))
    return out


def detect_unchecked_call(ctx: Context) -> list[Finding]:
    out = []
    for path in ctx.normal():
        branches = _events(path, BranchEvent)
        for call in _events(path, CallEvent):
            used = any(call.tag in b.cond.taint for b in branches if b.step > call.step)
            if not used and ctx.sat(path):
                out.append(ctx.finding(VulnKind.URV, call.pc, path, f"{call.op} result is never checked"))
    return out


def detect_dos(ctx: Context) -> list[Finding]:
    """External calls inside a loop.  Static: a CALL-family instruction in a
    loop member block.  Dynamic: a call made between two visits of a loop
    header on one path (loops whose body reaches the call through an
    internal function)."""
    out = []
    for loop in ctx.loops:
        for bid in sorted(loop.members):
            for ins in ctx.cfg.blocks[bid].instructions:
                if ins.name in CALL_FAMILY:
                    out.append(ctx.finding(VulnKind.DoS, ins.pc, None,
                                           f"{ins.name} inside loop at block {loop.header:#x}",
                                           blocks=loop.members))
    headers = {loop.header: loop for loop in ctx.loops}
    if not headers:
        return out
    for path in ctx.paths:
        calls = _events(path, CallEvent)
        if not calls:
            continue
        visits: dict[int, list[int]] = {}
        for k, (pc, _) in enumerate(path.state.trace):
            if pc in headers:
                visits.setdefault(pc, []).append(k)
        for header, steps in visits.items():
            if len(steps) < 2:
                continue
            for call in calls:
                if steps[0] < call.step <= steps[-1]:
                    out.append(ctx.finding(VulnKind.DoS, call.pc, path,
                                           f"{call.op} repeated by loop at block {header:#x}",
                                           blocks=headers[header].members))
    return out


def _transfers(path: PathResult) -> list[CallEvent]:
    return [c for c in _events(path, CallEvent) if _may_be_nonzero(c.value)]


def detect_bad_randomness(ctx: Context) -> list[Finding]:
    out = []
    for path in ctx.normal():
        transfers = _transfers(path)
        if not transfers:
            continue
        hits = []
        for c in transfers:
            if V.BLOCK_ENV in c.value.taint or V.BLOCK_ENV in c.to.taint:
                hits.append((c.pc, "block data decides a transfer's amount or recipient"))
        first = transfers[0].step
        for b in _events(path, BranchEvent):
            if b.step < first and V.BLOCK_ENV in b.cond.taint and ctx.user_guard(b.pc):
                hits.append((b.pc, "block data decides whether value is transferred"))
        if hits and ctx.sat(path):
            out.extend(ctx.finding(VulnKind.BR, pc, path, msg) for pc, msg in hits)
    return out


def detect_timestamp(ctx: Context) -> list[Finding]:
    out = []
    for path in ctx.normal():
        effects = [e.step for e in _events(path, StoreEvent)] + [c.step for c in _transfers(path)]
        hits = []
        if effects:
            last = max(effects)
            for b in _events(path, BranchEvent):
                if b.step < last and V.TIMESTAMP in b.cond.taint and ctx.user_guard(b.pc):
                    hits.append((b.pc, "block timestamp guards a state change or transfer"))
        for c in _transfers(path):
            if V.TIMESTAMP in c.value.taint:
                hits.append((c.pc, "transferred amount depends on the block timestamp"))
        if hits and ctx.sat(path):
            out.extend(ctx.finding(VulnKind.TM, pc, path, msg) for pc, msg in hits)
    return out


def _slot_tags(taint: frozenset[str]) -> set[int]:
    return {int(t[5:], 16) for t in taint if t.startswith("slot:0x")}


def detect_front_running(ctx: Context) -> list[Finding]:
    """A value-transferring path guarded by a state variable that another
    entry point writes.  Reported at low certainty."""
    writers: dict[int, set] = {}
    for path in ctx.normal():
        fn = path.state.function
        for e in _events(path, StoreEvent):
            if isinstance(e.slot, int):
                writers.setdefault(e.slot, set()).add(fn)
    out = []
    for path in ctx.normal():
        transfers = _transfers(path)
        if not transfers:
            continue
        fn = path.state.function
        first = transfers[0].step
        for b in _events(path, BranchEvent):
            if b.step >= first or V.CALLER in b.cond.taint or not ctx.user_guard(b.pc):
                continue
            racy = [s for s in _slot_tags(b.cond.taint) if writers.get(s, set()) - {fn}]
            if racy and ctx.sat(path):
                out.append(ctx.finding(VulnKind.FR, b.pc, path,
                                       f"guard reads slot {racy[0]:#x}, written by another function",
                                       certainty="low"))
    return out


_INT_TYPES = ("uint", "int")


def _short_address_candidates(methods: Mapping[int, str]) -> dict[int, str]:
    out = {}
    for sel, sig in methods.items():
        params = sig[sig.index("(") + 1: sig.rindex(")")].split(",") if "(" in sig else []
        seen_address = False
        for p in params:
            if p == "address":
                seen_address = True
            elif seen_address and p.startswith(_INT_TYPES):
                out[sel] = sig
                break
    return out


def detect_short_address(ctx: Context) -> list[Finding]:
    candidates = _short_address_candidates(ctx.methods)
    out = []
    for path in ctx.normal():
        fn = path.state.function
        if fn not in candidates or path.state.function_entry is None:
            continue
        guarded = any(
            e.op == "EQ" and (V.CALL_DATA_SIZE in e.a.taint or V.CALL_DATA_SIZE in e.b.taint)
            for e in _events(path, CompareEvent)
        )
        if not guarded and ctx.sat(path):
            out.append(ctx.finding(VulnKind.SAA, path.state.function_entry, path,
                                   f"{candidates[fn]} does not check msg.data length"))
    return out


PATTERNS: dict[VulnKind, Callable[[Context], list[Finding]]] = {
    VulnKind.RE: detect_reentrancy,
    VulnKind.AC: detect_access_control,
    VulnKind.AI: detect_arithmetic,
    VulnKind.URV: detect_unchecked_call,
    VulnKind.DoS: detect_dos,
    VulnKind.BR: detect_bad_randomness,
    VulnKind.FR: detect_front_running,
    VulnKind.TM: detect_timestamp,
    VulnKind.SAA: detect_short_address,
}


def _in_region(finding: Finding, pruned: PrunedCfg) -> bool:
    blocks = finding.block_ids if finding.kind is not VulnKind.DoS else ()
    site = pruned.base.pc_to_block.get(finding.pc)
    return (site is not None and pruned.retains(site)) or any(pruned.retains(b) for b in blocks)


def detect_all(
    paths: Sequence[PathResult],
    cfg: Cfg,
    loops: Sequence[Loop],
    pruned: PrunedCfg | None = None,
    compiler_version: str | None = None,
    *,
    ast: AstNode | None = None,
    method_identifiers: Mapping[str, str] | None = None,
    kinds: Iterable[VulnKind] | None = None,
    query_timeout_ms: int = 5000,
    budget: float | None = None,
) -> DetectionResult:
    """Run every pattern; keep findings inside the pruned region when one is
    given, tag them unpruned otherwise; deduplicate on (kind, start offset).
    """
    ctx = Context(paths, cfg, loops, compiler_version, ast, method_identifiers, query_timeout_ms)
    deadline = time.monotonic() + budget if budget else None
    findings: list[Finding] = []
    diagnostics: list[str] = []
    for kind in kinds or PATTERNS:
        if deadline is not None and time.monotonic() > deadline:
            diagnostics.append(f"{kind.value}: skipped, detection budget exhausted")
            continue
        try:
            findings.extend(PATTERNS[VulnKind(kind)](ctx))
        except z3.Z3Exception as exc:
            diagnostics.append(f"{VulnKind(kind).value}: skipped, solver error: {exc}")
    confidence = Confidence.PRUNED if pruned is not None else Confidence.UNPRUNED
    kept: dict[tuple[str, int], Finding] = {}
    for f in sorted(findings, key=Finding.sort_key):
        if pruned is not None and not _in_region(f, pruned):
            continue
        key = (f.kind.value, f.start if f.source_range else -1 - f.pc)
        if key not in kept:
            kept[key] = Finding(f.kind, f.pc, f.source_range, f.block_ids, f.message,
                                f.witness, confidence, f.certainty)
    return DetectionResult(sorted(kept.values(), key=Finding.sort_key), diagnostics)
