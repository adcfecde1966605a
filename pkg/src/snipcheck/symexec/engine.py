"""Bounded depth-first symbolic execution over an EVM control-flow graph."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterable
from dataclasses import dataclass, field

import z3

from snipcheck.evm.cfg import Cfg, Edge, EdgeKind, Terminator
from snipcheck.evm.disasm import Instruction
from snipcheck.symexec import values as V
from snipcheck.symexec.solver import SolverVerdict, Status, solve
from snipcheck.symexec.state import (
    MAX_STACK,
    ArithEvent,
    BranchEvent,
    CallEvent,
    CompareEvent,
    Constraint,
    LoadEvent,
    SelfDestructEvent,
    StoreEvent,
    SymState,
    Termination,
    slot_tag,
    term_key,
)
from snipcheck.symexec.values import EMPTY, Term, Value

logger = logging.getLogger(__name__)

MAX_JUMP_SOLUTIONS = 8


@dataclass(frozen=True)
class Limits:
    max_depth: int = 512  # blocks per path
    loop_bound: int = 3  # back-edge traversals per path
    timeout: float = 300.0  # seconds per contract
    query_timeout_ms: int = 5000

    def __post_init__(self) -> None:
        if min(self.max_depth, self.loop_bound, self.timeout, self.query_timeout_ms) <= 0:
            raise ValueError("exploration limits must be positive")


@dataclass(frozen=True)
class Env:
    """Transaction environment.  ``None`` fields are symbolic."""

    calldata: bytes | None = None
    caller: int | None = None
    origin: int | None = None
    callvalue: int | None = None
    timestamp: int | None = None
    number: int | None = None
    address: int | None = None
    self_balance: int | None = None
    storage: dict[int, int] | None = None  # concrete pre-state; missing slots read 0
    call_success: int | None = None  # concrete result for every external call
    gas: int | None = None


@dataclass
class PathResult:
    state: SymState
    termination: Termination

    @property
    def trace(self) -> list[tuple[int, str]]:
        return self.state.trace

    @property
    def events(self) -> list:
        return self.state.events


@dataclass
class Exploration:
    paths: list[PathResult]
    dynamic_edges: set[tuple[int, int]] = field(default_factory=set)
    summary_edges: set[tuple[int, int]] = field(default_factory=set)
    timed_out: bool = False
    elapsed: float = 0.0

    def refined_edges(self) -> list[Edge]:
        return [Edge(a, b, EdgeKind.DYNAMIC) for a, b in sorted(self.dynamic_edges)]

    def loop_edges(self) -> list[Edge]:
        """Call-site -> return-continuation edges; adding these (and not the
        return jumps themselves) to the static CFG exposes loops whose body
        calls an internal function without inventing cycles through shared
        callees."""
        return [Edge(a, b, EdgeKind.CALL_SUMMARY) for a, b in sorted(self.summary_edges)]


class _Halt(Exception):
    def __init__(self, termination: Termination) -> None:
        self.termination = termination


_BLOCK_ENV_OPS = {
    "NUMBER": "number",
    "PREVRANDAO": "prevrandao",
    "COINBASE": "coinbase",
    "GASLIMIT": "gaslimit",
    "BASEFEE": "basefee",
    "CHAINID": None,
}


class Explorer:
    def __init__(
        self,
        cfg: Cfg,
        code: bytes = b"",
        *,
        limits: Limits | None = None,
        env: Env | None = None,
        back_edges: Iterable[tuple[int, int]] | None = None,
        selectors: Iterable[int] | None = None,
    ) -> None:
        self.cfg = cfg
        self.selectors = frozenset(selectors) if selectors is not None else None
        self.code = code
        self.limits = limits or Limits()
        self.env = env or Env()
        self.jumpdests = {
            bid for bid, b in cfg.blocks.items() if b.instructions[0].name == "JUMPDEST"
        }
        self.back_edges = set(back_edges) if back_edges is not None else None
        self.calldata = z3.Array("calldata", z3.BitVecSort(256), z3.BitVecSort(8))
        self.init_storage = z3.Array("storage", z3.BitVecSort(256), z3.BitVecSort(256))
        self.balance_fn = z3.Function("balance", z3.BitVecSort(256), z3.BitVecSort(256))
        self.blockhash_fn = z3.Function("blockhash", z3.BitVecSort(256), z3.BitVecSort(256))
        self._deadline = 0.0
        self._timed_out = False
        self.dynamic_edges: set[tuple[int, int]] = set()
        self.summary_edges: set[tuple[int, int]] = set()

    # ------------------------------------------------------------ env
    def _env_value(self, name: str, concrete: int | None, taint: frozenset[str], bits: int = 256) -> Value:
        if concrete is not None:
            return Value(concrete & V.MASK, taint)
        sym = z3.BitVec(name, bits)
        if bits < 256:
            sym = z3.ZeroExt(256 - bits, sym)
        return Value(sym, taint)

    def _calldatasize(self) -> Value:
        tags = frozenset({V.CALL_DATA_SIZE, V.CALL_DATA})
        if self.env.calldata is not None:
            return Value(len(self.env.calldata), tags)
        return Value(z3.ZeroExt(224, z3.BitVec("calldatasize", 32)), tags)

    def _calldata_byte(self, index: Term) -> Term:
        if self.env.calldata is not None:
            if isinstance(index, int):
                return self.env.calldata[index] if index < len(self.env.calldata) else 0
            return 0
        return z3.Select(self.calldata, V.to_z3(index))

    # ------------------------------------------------------------ solver
    def _feasible(self, state: SymState, extra: z3.BoolRef | None = None) -> SolverVerdict:
        return solve(state.path_condition(), extra, timeout_ms=self.limits.query_timeout_ms)

    # ------------------------------------------------------------ driver
    def run(self) -> Exploration:
        start = time.monotonic()
        self._deadline = start + self.limits.timeout
        results: list[PathResult] = []
        if self.cfg.entry_id is None:
            return Exploration([], elapsed=0.0)
        work = [SymState(block=self.cfg.entry_id)]
        while work:
            state = work.pop()
            if time.monotonic() > self._deadline:
                self._timed_out = True
                results.append(PathResult(state, Termination.TIMEOUT))
                continue
            try:
                successors = self._run_block(state)
            except _Halt as halt:
                results.append(PathResult(state, halt.termination))
                continue
            # reversed so the first successor is explored first
            for nxt in reversed(successors):
                if isinstance(nxt, PathResult):
                    results.append(nxt)
                else:
                    work.append(nxt)
        return Exploration(
            results,
            set(self.dynamic_edges),
            set(self.summary_edges),
            self._timed_out,
            time.monotonic() - start,
        )

    def _enter(self, state: SymState, src: int, dst: int) -> SymState | PathResult:
        """Move to ``dst``; a back edge past the loop bound ends the path
        here without disturbing sibling successors."""
        key = (src, dst)
        count = state.edge_counts.get(key, 0) + 1
        if self._is_back_edge(src, dst) and count > self.limits.loop_bound:
            return PathResult(state, Termination.LOOP_LIMIT)
        state.edge_counts[key] = count
        state.block = dst
        return state

    def _is_back_edge(self, src: int, dst: int) -> bool:
        if self.back_edges is not None and (src, dst) in self.back_edges:
            return True
        # backward transfer in code layout; catches loops the static graph
        # cannot see (bodies that call internal functions)
        return dst <= src

    def _run_block(self, state: SymState) -> list[SymState | PathResult]:
        if len(state.blocks) >= self.limits.max_depth:
            raise _Halt(Termination.DEPTH_LIMIT)
        block = self.cfg.blocks[state.block]
        state.blocks.append(block.id)
        body = block.instructions
        for ins in body[:-1] if block.terminator is not Terminator.FALLTHROUGH else body:
            self._step(state, ins)
        term = block.terminator
        if term is Terminator.FALLTHROUGH:
            nxt = self._next_block(block.id)
            if nxt is None:
                raise _Halt(Termination.STOP)  # ran off the end of code
            return [self._enter(state, block.id, nxt)]
        last = block.last
        state.trace.append((last.pc, last.name))
        if term is Terminator.STOP:
            raise _Halt(Termination.STOP)
        if term is Terminator.INVALID:
            raise _Halt(Termination.INVALID)
        if term in (Terminator.RETURN, Terminator.REVERT):
            self._pop(state, 2)
            raise _Halt(Termination.RETURN if term is Terminator.RETURN else Termination.REVERT)
        if term is Terminator.SELFDESTRUCT:
            (beneficiary,) = self._pop(state, 1)
            state.events.append(SelfDestructEvent(state.step, last.pc, beneficiary))
            raise _Halt(Termination.STOP)
        if term is Terminator.JUMP:
            (target,) = self._pop(state, 1)
            out = []
            for dest, st in self._resolve(state, block.id, target, last):
                out.append(self._enter(st, block.id, dest))
            if not out:
                raise _Halt(Termination.INVALID)
            return out
        # JUMPI
        target, cond = self._pop(state, 2)
        return self._branch(state, block, target, cond, last)

    def _next_block(self, block_id: int) -> int | None:
        end = self.cfg.blocks[block_id].end_pc
        return end if end in self.cfg.blocks else None

    def _resolve(
        self, state: SymState, src: int, target: Value, ins: Instruction
    ) -> list[tuple[int, SymState]]:
        static = [e for e in self.cfg.out_edges(src) if e.kind in (EdgeKind.JUMP, EdgeKind.BRANCH_TRUE)]
        if isinstance(target.term, int):
            dest = target.term
            if dest not in self.jumpdests:
                return []
            if not static:
                self._record_dynamic(src, dest, target)
            return [(dest, state)]
        # symbolic target: enumerate feasible JUMPDEST values
        found: list[tuple[int, SymState]] = []
        if not self.jumpdests:
            return found
        z_target = target.z3()
        s = z3.Solver()
        s.set("timeout", self.limits.query_timeout_ms)
        s.add(*state.path_condition())
        s.add(z3.Or([z_target == d for d in sorted(self.jumpdests)]))
        for _ in range(MAX_JUMP_SOLUTIONS):
            if s.check() != z3.sat:
                break
            dest = s.model().eval(z_target, model_completion=True).as_long()
            s.add(z_target != dest)
            st = state.fork()
            st.constraints.append(Constraint(z_target == dest, target.taint, ins.pc))
            self.dynamic_edges.add((src, dest))
            found.append((dest, st))
        return found

    def _record_dynamic(self, src: int, dest: int, target: Value) -> None:
        self.dynamic_edges.add((src, dest))
        if target.origin is not None:
            origin_block = self.cfg.pc_to_block.get(target.origin)
            if origin_block is not None:
                self.summary_edges.add((origin_block, dest))

    def _branch(
        self, state: SymState, block, target: Value, cond: Value, ins: Instruction
    ) -> list[SymState | PathResult]:
        fall = self._next_block(block.id)
        truth = V.as_bool(cond.term)
        out: list[SymState] = []
        if isinstance(truth, bool) or z3.is_true(truth) or z3.is_false(truth):
            taken = truth if isinstance(truth, bool) else z3.is_true(truth)
            state.events.append(BranchEvent(state.step, ins.pc, cond, taken, len(state.constraints)))
            if taken:
                self._note_dispatch(state, cond, target)
                return [self._enter(st, block.id, d) for d, st in self._resolve(state, block.id, target, ins)]
            if fall is None:
                raise _Halt(Termination.STOP)
            return [self._enter(state, block.id, fall)]
        not_truth = z3.Not(truth)
        true_ok = self._feasible(state, truth).maybe_sat
        false_ok = self._feasible(state, not_truth).maybe_sat
        branches = []
        if true_ok:
            branches.append((True, truth))
        if false_ok:
            branches.append((False, not_truth))
        for k, (taken, c) in enumerate(branches):
            st = state if k == len(branches) - 1 else state.fork()
            st.events.append(BranchEvent(st.step, ins.pc, cond, taken, len(st.constraints)))
            st.constraints.append(Constraint(c, cond.taint, ins.pc))
            if taken:
                self._note_dispatch(st, cond, target)
                for d, s2 in self._resolve(st, block.id, target, ins):
                    out.append(self._enter(s2, block.id, d))
            elif fall is not None:
                out.append(self._enter(st, block.id, fall))
        if not out:
            raise _Halt(Termination.INVALID)
        return out

    def _note_dispatch(self, state: SymState, cond: Value, target: Value) -> None:
        if state.function is not None:
            return
        for tag in cond.taint:
            if tag.startswith("selector:"):
                state.function = int(tag.split(":", 1)[1], 16)
                if isinstance(target.term, int):
                    state.function_entry = target.term
                return

    # ------------------------------------------------------------ stack
    def _pop(self, state: SymState, n: int) -> list[Value]:
        if len(state.stack) < n:
            raise _Halt(Termination.INVALID)
        out = state.stack[-n:][::-1] if n else []
        del state.stack[len(state.stack) - n :]
        return out

    def _push(self, state: SymState, value: Value) -> None:
        if len(state.stack) >= MAX_STACK:
            raise _Halt(Termination.INVALID)
        state.stack.append(value)

    # ------------------------------------------------------------ step
    def _step(self, state: SymState, ins: Instruction) -> None:
        name = ins.name
        state.trace.append((ins.pc, name))
        push = self._push
        if name.startswith("PUSH"):
            push(state, Value(ins.push_value or 0, EMPTY, ins.pc))
            return
        if name.startswith("DUP"):
            n = ins.op.pops
            if len(state.stack) < n:
                raise _Halt(Termination.INVALID)
            push(state, state.stack[-n])
            return
        if name.startswith("SWAP"):
            n = ins.op.pops - 1
            if len(state.stack) < n + 1:
                raise _Halt(Termination.INVALID)
            s = state.stack
            s[-1], s[-1 - n] = s[-1 - n], s[-1]
            return
        handler = getattr(self, "_op_" + name, None)
        if handler is None:
            # unmodelled opcode: havoc its outputs
            args = self._pop(state, ins.op.pops)
            taint = frozenset().union(*(a.taint for a in args)) if args else EMPTY
            for _ in range(ins.op.pushes):
                push(state, state.fresh(name.lower(), taint))
            return
        handler(state, ins)

    # arithmetic ----------------------------------------------------------
    def _arith(self, state: SymState, ins: Instruction, fn) -> None:
        a, b = self._pop(state, 2)
        r = Value(fn(a.term, b.term), a.taint | b.taint)
        if ins.name in ("ADD", "SUB", "MUL") and not (a.concrete and b.concrete):
            state.events.append(
                ArithEvent(state.step, ins.pc, ins.name, a, b, r, len(state.constraints))
            )
        self._push(state, r)

    def _op_ADD(self, s, i): self._arith(s, i, V.op_add)
    def _op_SUB(self, s, i): self._arith(s, i, V.op_sub)
    def _op_MUL(self, s, i): self._arith(s, i, V.op_mul)
    def _divmod(self, state: SymState, ins: Instruction, fn) -> None:
        """Unsigned DIV/MOD.  A symbolic divisor makes bvudiv/bvurem terms the
        solver chokes on, so the result is a fresh word bounded the way the
        exact one is: an over-approximation that only adds feasible paths."""
        a, b = self._pop(state, 2)
        if b.concrete:
            self._push(state, Value(fn(a.term, b.term), a.taint | b.taint))
            return
        r = state.fresh(ins.name.lower(), a.taint | b.taint)
        za, zb, zr = a.z3(), b.z3(), r.z3()
        bound = z3.ULE(zr, za)
        if ins.name == "MOD":
            bound = z3.And(bound, z3.ULT(zr, zb))
        state.constraints.append(Constraint(z3.If(zb == 0, zr == 0, bound), EMPTY, ins.pc))
        self._push(state, r)

    def _op_DIV(self, s, i): self._divmod(s, i, V.op_div)
    def _op_SDIV(self, s, i): self._arith(s, i, V.op_sdiv)
    def _op_MOD(self, s, i): self._divmod(s, i, V.op_mod)
    def _op_SMOD(self, s, i): self._arith(s, i, V.op_smod)
    def _op_AND(self, s, i): self._arith(s, i, lambda a, b: V.op_bitwise("AND", a, b))
    def _op_OR(self, s, i): self._arith(s, i, lambda a, b: V.op_bitwise("OR", a, b))
    def _op_XOR(self, s, i): self._arith(s, i, lambda a, b: V.op_bitwise("XOR", a, b))
    def _op_BYTE(self, s, i): self._arith(s, i, V.op_byte)
    def _op_SHL(self, s, i): self._arith(s, i, lambda a, b: V.op_shift("SHL", a, b))
    def _op_SHR(self, s, i): self._arith(s, i, lambda a, b: V.op_shift("SHR", a, b))
    def _op_SAR(self, s, i): self._arith(s, i, lambda a, b: V.op_shift("SAR", a, b))

    def _op_ADDMOD(self, state, ins):
        a, b, n = self._pop(state, 3)
        self._push(state, Value(V.op_addmod(a.term, b.term, n.term), a.taint | b.taint | n.taint))

    def _op_MULMOD(self, state, ins):
        a, b, n = self._pop(state, 3)
        self._push(state, Value(V.op_mulmod(a.term, b.term, n.term), a.taint | b.taint | n.taint))

    def _op_EXP(self, state, ins):
        a, b = self._pop(state, 2)
        r = V.op_exp(a.term, b.term)
        taint = a.taint | b.taint
        self._push(state, state.fresh("exp", taint) if r is None else Value(r, taint))

    def _op_SIGNEXTEND(self, state, ins):
        b, x = self._pop(state, 2)
        r = V.op_signextend(b.term, x.term)
        taint = b.taint | x.taint
        self._push(state, state.fresh("signext", taint) if r is None else Value(r, taint))

    def _compare(self, state, ins):
        a, b = self._pop(state, 2)
        taint = a.taint | b.taint
        # a dispatcher comparison against a known selector
        for x, y in ((a, b), (b, a)):
            if ins.name == "EQ" and isinstance(x.term, int) and x.term < (1 << 32) \
                    and V.CALL_DATA in y.taint and V.CALL_DATA_SIZE not in y.taint \
                    and (self.selectors is None or x.term in self.selectors):
                taint = taint | {f"selector:{x.term:08x}"}
        r = Value(V.op_cmp(ins.name, a.term, b.term), taint)
        state.events.append(CompareEvent(state.step, ins.pc, ins.name, a, b, r))
        self._push(state, r)

    _op_LT = _op_GT = _op_SLT = _op_SGT = _op_EQ = _compare

    def _op_ISZERO(self, state, ins):
        (a,) = self._pop(state, 1)
        self._push(state, Value(V.op_iszero(a.term), a.taint))

    def _op_NOT(self, state, ins):
        (a,) = self._pop(state, 1)
        self._push(state, Value(V.op_not(a.term), a.taint))

    def _op_SHA3(self, state, ins):
        off, size = self._pop(state, 2)
        if not (isinstance(off.term, int) and isinstance(size.term, int)) or size.term > 4096:
            self._push(state, state.fresh("sha3", off.taint | size.taint))
            return
        parts, taint = state.memory.load_bytes(off.term, size.term)
        if all(isinstance(p, int) for p in parts):
            self._push(state, Value(V.keccak256(bytes(parts)), taint))  # type: ignore[arg-type]
            return
        data = V.concat_bytes(parts)
        width = 8 * size.term
        fn = z3.Function(f"keccak{width}", z3.BitVecSort(width), z3.BitVecSort(256))
        result = fn(data)
        # injectivity against earlier applications of the same width on this path
        for w, arg, res in state.keccak_apps:
            if w == width and not arg.eq(data):
                state.constraints.append(
                    Constraint(z3.Implies(arg != data, res != result), EMPTY, ins.pc)
                )
        state.keccak_apps.append((width, data, result))
        self._push(state, Value(result, taint))

    # environment --------------------------------------------------------
    def _op_ADDRESS(self, state, ins):
        self._push(state, self._env_value("address", self.env.address, EMPTY, 160))

    def _op_BALANCE(self, state, ins):
        (a,) = self._pop(state, 1)
        if self.env.self_balance is not None and self.env.address is not None \
                and isinstance(a.term, int) and a.term == self.env.address:
            self._push(state, Value(self.env.self_balance, frozenset({V.BALANCE})))
            return
        self._push(state, Value(self.balance_fn(a.z3()), a.taint | {V.BALANCE}))

    def _op_SELFBALANCE(self, state, ins):
        self._push(state, self._env_value("selfbalance", self.env.self_balance, frozenset({V.BALANCE})))

    def _op_ORIGIN(self, state, ins):
        self._push(state, self._env_value("origin", self.env.origin, frozenset({V.ORIGIN}), 160))

    def _op_CALLER(self, state, ins):
        self._push(state, self._env_value("caller", self.env.caller, frozenset({V.CALLER}), 160))

    def _op_CALLVALUE(self, state, ins):
        self._push(state, self._env_value("callvalue", self.env.callvalue, frozenset({V.CALL_VALUE})))

    def _op_CALLDATALOAD(self, state, ins):
        (off,) = self._pop(state, 1)
        taint = off.taint | {V.CALL_DATA}
        if isinstance(off.term, int):
            parts = [self._calldata_byte(off.term + i) for i in range(32)]
        else:
            parts = [self._calldata_byte(off.z3() + i) for i in range(32)]
        self._push(state, Value(V.concat_bytes(parts), frozenset(taint)))

    def _op_CALLDATASIZE(self, state, ins):
        self._push(state, self._calldatasize())

    def _op_CALLDATACOPY(self, state, ins):
        dst, src, size = self._pop(state, 3)
        if not (isinstance(dst.term, int) and isinstance(size.term, int)) or size.term > 4096:
            return
        taint = frozenset({V.CALL_DATA}) | src.taint
        for i in range(size.term):
            idx = src.term + i if isinstance(src.term, int) else src.z3() + i
            b = self._calldata_byte(idx)
            word = b if isinstance(b, int) else z3.ZeroExt(248, b)
            state.memory.store_cell(dst.term + i, (Value(word, taint), 31))

    def _op_CODESIZE(self, state, ins):
        self._push(state, Value(len(self.code)))

    def _op_CODECOPY(self, state, ins):
        dst, src, size = self._pop(state, 3)
        if not all(isinstance(x.term, int) for x in (dst, src, size)) or size.term > 65536:
            return
        for i in range(size.term):
            k = src.term + i
            state.memory.store_cell(dst.term + i, (Value(self.code[k] if k < len(self.code) else 0), 31))

    def _op_GASPRICE(self, state, ins):
        self._push(state, Value(z3.BitVec("gasprice", 256)))

    def _op_EXTCODESIZE(self, state, ins):
        (a,) = self._pop(state, 1)
        if self.env.call_success is not None:
            self._push(state, Value(1))
            return
        self._push(state, state.fresh("extcodesize", a.taint))

    def _op_EXTCODEHASH(self, state, ins):
        (a,) = self._pop(state, 1)
        self._push(state, state.fresh("extcodehash", a.taint))

    def _op_RETURNDATASIZE(self, state, ins):
        self._push(state, state.returndata_size)

    def _op_RETURNDATACOPY(self, state, ins):
        dst, src, size = self._pop(state, 3)
        if not (isinstance(dst.term, int) and isinstance(size.term, int)) or size.term > 4096:
            return
        for i in range(0, size.term, 32):
            state.memory.store_word(dst.term + i, state.fresh("returndata", frozenset({V.EXTERNAL_CALL_RESULT})))

    def _op_BLOCKHASH(self, state, ins):
        (n,) = self._pop(state, 1)
        self._push(state, Value(self.blockhash_fn(n.z3()), n.taint | {V.BLOCK_ENV}))

    def _op_TIMESTAMP(self, state, ins):
        self._push(state, self._env_value("timestamp", self.env.timestamp,
                                          frozenset({V.TIMESTAMP, V.BLOCK_ENV})))

    def _op_NUMBER(self, state, ins):
        self._push(state, self._env_value("number", self.env.number, frozenset({V.BLOCK_ENV})))

    def _op_PREVRANDAO(self, state, ins):
        self._push(state, Value(z3.BitVec("prevrandao", 256), frozenset({V.BLOCK_ENV})))

    def _op_COINBASE(self, state, ins):
        self._push(state, Value(z3.ZeroExt(96, z3.BitVec("coinbase", 160)), frozenset({V.BLOCK_ENV})))

    def _op_GASLIMIT(self, state, ins):
        self._push(state, Value(z3.BitVec("gaslimit", 256), frozenset({V.BLOCK_ENV})))

    def _op_CHAINID(self, state, ins):
        self._push(state, Value(1))

    def _op_BASEFEE(self, state, ins):
        self._push(state, Value(z3.BitVec("basefee", 256)))

    def _op_GAS(self, state, ins):
        if self.env.gas is not None:
            self._push(state, Value(self.env.gas, frozenset({V.GAS})))
            return
        self._push(state, state.fresh("gas", frozenset({V.GAS})))

    def _op_PC(self, state, ins):
        self._push(state, Value(ins.pc))

    def _op_MSIZE(self, state, ins):
        self._push(state, Value(state.memory.size))

    def _op_POP(self, state, ins):
        self._pop(state, 1)

    def _op_JUMPDEST(self, state, ins):
        pass

    # memory & storage ----------------------------------------------------
    def _op_MLOAD(self, state, ins):
        (off,) = self._pop(state, 1)
        if isinstance(off.term, int):
            self._push(state, state.memory.load_word(off.term))
        else:
            self._push(state, state.fresh("mload", off.taint))

    def _op_MSTORE(self, state, ins):
        off, val = self._pop(state, 2)
        if isinstance(off.term, int):
            state.memory.store_word(off.term, Value(val.term, val.taint))

    def _op_MSTORE8(self, state, ins):
        off, val = self._pop(state, 2)
        if isinstance(off.term, int):
            low = val.term & 0xFF if isinstance(val.term, int) else z3.ZeroExt(248, z3.Extract(7, 0, val.term))
            state.memory.store_byte(off.term, Value(low, val.taint))

    def _op_MCOPY(self, state, ins):
        dst, src, size = self._pop(state, 3)
        if not all(isinstance(x.term, int) for x in (dst, src, size)) or size.term > 4096:
            return
        cells = [state.memory.cells.get(src.term + i, (Value(0), 31)) for i in range(size.term)]
        for i, cell in enumerate(cells):
            state.memory.store_cell(dst.term + i, cell)

    def _op_SLOAD(self, state, ins):
        (key,) = self._pop(state, 1)
        slot = term_key(key.term)
        if slot in state.storage:
            value = state.storage[slot][1]
        elif self.env.storage is not None and isinstance(slot, int):
            value = Value(self.env.storage.get(slot, 0), frozenset({V.STORAGE, slot_tag(slot)}))
        else:
            term = z3.Select(self.init_storage, key.z3())
            value = Value(term, key.taint | {V.STORAGE, slot_tag(slot)})
        state.events.append(LoadEvent(state.step, ins.pc, key, slot, value))
        self._push(state, value)

    def _op_SSTORE(self, state, ins):
        key, val = self._pop(state, 2)
        slot = term_key(key.term)
        state.storage[slot] = (key, val)
        state.events.append(StoreEvent(state.step, ins.pc, key, slot, val))

    def _op_TLOAD(self, state, ins):
        (key,) = self._pop(state, 1)
        self._push(state, state.fresh("tload", key.taint))

    def _op_TSTORE(self, state, ins):
        self._pop(state, 2)

    def _op_LOG0(self, state, ins): self._pop(state, 2)
    def _op_LOG1(self, state, ins): self._pop(state, 3)
    def _op_LOG2(self, state, ins): self._pop(state, 4)
    def _op_LOG3(self, state, ins): self._pop(state, 5)
    def _op_LOG4(self, state, ins): self._pop(state, 6)

    # calls ---------------------------------------------------------------
    def _external_call(self, state: SymState, ins: Instruction, has_value: bool) -> None:
        if has_value:
            gas, to, value, in_off, in_size, out_off, out_size = self._pop(state, 7)
        else:
            gas, to, in_off, in_size, out_off, out_size = self._pop(state, 6)
            value = None
        state.call_count += 1
        tag = f"call:{ins.pc:x}#{state.call_count}"
        taint = frozenset({V.EXTERNAL_CALL_RESULT, tag})
        if self.env.call_success is not None:
            result = Value(self.env.call_success & 1, taint)
            state.returndata_size = Value(0)
        else:
            result = state.fresh("callok", taint)
            state.constraints.append(Constraint(z3.ULE(result.z3(), 1), EMPTY, ins.pc))
            state.returndata_size = state.fresh("returndatasize", frozenset({"ReturnData"}))
            if isinstance(out_off.term, int) and isinstance(out_size.term, int) and out_size.term <= 4096:
                for i in range(0, out_size.term, 32):
                    state.memory.store_word(
                        out_off.term + i,
                        state.fresh("calldataout", frozenset({V.EXTERNAL_CALL_RESULT, tag})),
                    )
        state.events.append(CallEvent(state.step, ins.pc, ins.name, gas, to, value, result, tag))
        self._push(state, result)

    def _op_CALL(self, state, ins): self._external_call(state, ins, True)
    def _op_CALLCODE(self, state, ins): self._external_call(state, ins, True)
    def _op_DELEGATECALL(self, state, ins): self._external_call(state, ins, False)
    def _op_STATICCALL(self, state, ins): self._external_call(state, ins, False)

    def _op_CREATE(self, state, ins):
        self._pop(state, 3)
        self._push(state, state.fresh("created", frozenset({V.EXTERNAL_CALL_RESULT})))

    def _op_CREATE2(self, state, ins):
        self._pop(state, 4)
        self._push(state, state.fresh("created", frozenset({V.EXTERNAL_CALL_RESULT})))


def explore(
    cfg: Cfg,
    code: bytes = b"",
    limits: Limits | None = None,
    *,
    env: Env | None = None,
    back_edges: Iterable[tuple[int, int]] | None = None,
    selectors: Iterable[int] | None = None,
) -> Exploration:
    """Enumerate paths of ``cfg`` depth first.

    Both sides of a symbolic JUMPI are followed when the solver does not
    rule them out (an Unknown verdict counts as feasible).  Backward jumps
    are taken at most ``limits.loop_bound`` times per edge and path.
    """
    return Explorer(cfg, code, limits=limits, env=env, back_edges=back_edges,
                    selectors=selectors).run()


def path_is_sat(path: PathResult, extra: z3.BoolRef | None = None, timeout_ms: int = 5000) -> bool:
    """Detector-side check: the path (plus ``extra``) must be proven Sat."""
    return solve(path.state.path_condition(), extra, timeout_ms=timeout_ms).status is Status.SAT
