from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfg_checks import assert_partition, assert_transfers_covered
from oracle_evm import OracleEnv, assemble, run
from snipcheck.evm.cfg import EdgeKind, Terminator, build_cfg, segment
from snipcheck.evm.disasm import disassemble, metadata_length, strip_metadata
from snipcheck.evm.loops import back_edges, detect_loops, dominators
from snipcheck.evm.opcodes import lookup


def names(code):
    return [i.name for i in disassemble(code)]


# ------------------------------------------------------------------ disassembler


def test_push_add():
    ins = disassemble(bytes.fromhex("6001600101"))
    assert [(i.name, i.push_value) for i in ins] == [("PUSH1", 1), ("PUSH1", 1), ("ADD", None)]


def test_single_stop():
    assert names(b"\x00") == ["STOP"]


def test_truncated_push_is_padded_and_flagged():
    (ins,) = disassemble(bytes.fromhex("61ff"))
    assert ins.name == "PUSH2"
    assert ins.push_data == b"\xff\x00"
    assert ins.truncated
    assert ins.size == 2


def test_unassigned_bytes_decode_invalid():
    assert names(bytes([0x0C, 0x21, 0xEF])) == ["INVALID"] * 3


def test_empty_code():
    assert disassemble(b"") == []
    assert build_cfg([]).entry_id is None


def test_hex_string_input():
    assert names("0x6001") == ["PUSH1"]


def test_metadata_trailer_stripped():
    cbor = bytes.fromhex("a264697066735822") + bytes(34) + bytes.fromhex("64736f6c6343000815")
    code = bytes.fromhex("600100fe") + cbor + len(cbor).to_bytes(2, "big")
    assert metadata_length(code) == len(cbor) + 2
    # the INVALID separator goes with the trailer
    assert strip_metadata(code) == bytes.fromhex("600100")
    assert names(code) == ["PUSH1", "STOP"]
    assert len(disassemble(code, strip_trailer=False)) > 2


def test_no_trailer_untouched():
    code = bytes.fromhex("6001600101fe")
    assert strip_metadata(code) == code


@given(st.binary(max_size=300))
def test_lengths_sum_to_code_size(code):
    ins = disassemble(code, strip_trailer=False)
    assert sum(i.size for i in ins) == len(code)
    pcs = [i.pc for i in ins]
    assert pcs == sorted(set(pcs))
    for a, b in zip(ins, ins[1:]):
        assert a.pc + a.size == b.pc


@given(st.integers(0, 255))
def test_opcode_table_widths(byte):
    info = lookup(byte)
    expected = byte - 0x5F if 0x60 <= byte <= 0x7F else 0
    assert info.push_width == expected


# ------------------------------------------------------------------ cfg


def test_jump_to_jumpdest():
    code = assemble("PUSH1 0x03 JUMP JUMPDEST STOP")
    cfg = build_cfg(disassemble(code))
    assert sorted(cfg.blocks) == [0, 3]
    assert [(e.src, e.dst, e.kind) for e in cfg.edges] == [(0, 3, EdgeKind.JUMP)]


def test_jumpi_has_two_successors():
    code = assemble("PUSH1 1 PUSH1 :t JUMPI STOP t: JUMPDEST STOP")
    cfg = build_cfg(disassemble(code))
    kinds = {e.kind: e.dst for e in cfg.out_edges(0)}
    assert kinds == {EdgeKind.BRANCH_TRUE: 6, EdgeKind.BRANCH_FALSE: 5}


def test_computed_jump_is_unresolved():
    code = assemble("PUSH1 0 CALLDATALOAD JUMP JUMPDEST STOP")
    cfg = build_cfg(disassemble(code))
    (edge,) = cfg.out_edges(0)
    assert edge.kind is EdgeKind.UNRESOLVED and edge.dst is None


def test_jump_to_non_jumpdest_dropped_with_diagnostic():
    code = assemble("PUSH1 4 JUMP STOP STOP STOP")
    cfg = build_cfg(disassemble(code))
    assert cfg.out_edges(0) == []
    assert "not a JUMPDEST" in cfg.diagnostics[0]


def test_resolution_through_stack_shuffles():
    code = assemble("PUSH1 :t PUSH1 7 SWAP1 DUP2 POP JUMP t: JUMPDEST STOP")
    cfg = build_cfg(disassemble(code))
    assert cfg.out_edges(0)[0].kind is EdgeKind.JUMP


def test_resolution_window_is_bounded():
    filler = " ".join(["PUSH1 1 POP"] * 20)
    code = assemble(f"PUSH1 :t {filler} JUMP t: JUMPDEST STOP")
    cfg = build_cfg(disassemble(code))
    assert cfg.out_edges(0)[0].kind is EdgeKind.UNRESOLVED


def test_terminators():
    code = assemble("PUSH1 0 PUSH1 0 REVERT JUMPDEST STOP")
    blocks = segment(disassemble(code))
    assert [b.terminator for b in blocks] == [Terminator.REVERT, Terminator.STOP]


# random structured programs: labels, static and computed jumps, arithmetic
_LABELS = [f"L{k}" for k in range(5)]
_chunk = st.one_of(
    st.sampled_from(["PUSH1 1 PUSH1 2 ADD POP", "PUSH1 0 CALLDATALOAD POP", "CALLVALUE POP",
                     "PUSH1 3 PUSH1 0 SSTORE", "PUSH1 0 SLOAD PUSH1 1 ADD PUSH1 0 SSTORE",
                     "STOP", "PUSH1 0 PUSH1 0 REVERT", "JUMPDEST"]),
    st.sampled_from(_LABELS).map(lambda l: f"PUSH1 :{l} JUMP"),
    st.sampled_from(_LABELS).map(lambda l: f"PUSH1 0 CALLDATALOAD PUSH1 :{l} JUMPI"),
    st.sampled_from(_LABELS).map(lambda l: f"PUSH1 0 SLOAD PUSH1 5 LT PUSH1 :{l} JUMPI"),
    st.sampled_from(_LABELS).map(lambda l: f"PUSH1 :{l} PUSH1 0 ADD JUMP"),
    st.just("PUSH1 32 CALLDATALOAD JUMP"),
)


@st.composite
def programs(draw):
    chunks = draw(st.lists(_chunk, min_size=1, max_size=14))
    text = []
    for k, c in enumerate(chunks):
        text.append(c)
        text.append(f"{_LABELS[k % 5]}: JUMPDEST" if k < 5 else "")
    return assemble(" ".join(text) + " STOP")


@settings(max_examples=150, deadline=None)
@given(programs(), st.binary(min_size=64, max_size=64))
def test_oracle_transfers_are_cfg_edges(code, calldata):
    cfg = build_cfg(disassemble(code))
    assert_partition(code, cfg)
    result = run(code, OracleEnv(calldata=calldata), max_steps=500)
    assert_transfers_covered(code, cfg, result.transfers)


@settings(max_examples=150, deadline=None)
@given(st.binary(max_size=200))
def test_partition_on_arbitrary_bytes(code):
    cfg = build_cfg(disassemble(code))
    assert_partition(code, cfg)
    for e in cfg.edges:
        assert e.src in cfg.blocks
        assert e.dst is None or e.dst in cfg.blocks


# ------------------------------------------------------------------ loops


def test_self_loop():
    code = assemble("PUSH1 0 POP l: JUMPDEST PUSH1 :l JUMP")
    cfg = build_cfg(disassemble(code))
    (loop,) = detect_loops(cfg)
    assert loop.members == {loop.header}


def test_acyclic_has_no_loops():
    code = assemble("PUSH1 1 PUSH1 :t JUMPI STOP t: JUMPDEST STOP")
    assert detect_loops(build_cfg(disassemble(code))) == []


def test_nested_loops_reported_separately():
    code = assemble("""
        outer: JUMPDEST
          inner: JUMPDEST
          PUSH1 0 CALLDATALOAD PUSH1 :inner JUMPI
        PUSH1 32 CALLDATALOAD PUSH1 :outer JUMPI
        STOP""")
    cfg = build_cfg(disassemble(code))
    loops = sorted(detect_loops(cfg), key=lambda l: len(l.members))
    assert len(loops) == 2
    inner, outer = loops
    assert inner.members < outer.members
    assert inner.header != outer.header


def test_dominators_of_diamond():
    code = assemble("""
        PUSH1 0 CALLDATALOAD PUSH1 :b JUMPI
        PUSH1 :join JUMP
        b: JUMPDEST PUSH1 :join JUMP
        join: JUMPDEST STOP""")
    cfg = build_cfg(disassemble(code))
    idom = dominators(cfg)
    join = max(cfg.blocks)
    assert idom[join] == 0
    assert back_edges(cfg) == []


def test_irreducible_entry_is_not_a_natural_loop():
    # two entries into the cycle a <-> b: no back edge dominates
    code = assemble("""
        PUSH1 0 CALLDATALOAD PUSH1 :b JUMPI
        a: JUMPDEST PUSH1 32 CALLDATALOAD PUSH1 :b JUMPI STOP
        b: JUMPDEST PUSH1 64 CALLDATALOAD PUSH1 :a JUMPI STOP""")
    assert detect_loops(build_cfg(disassemble(code))) == []


def test_loop_back_edge_executes_in_oracle():
    code = assemble("""
        PUSH1 0
        head: JUMPDEST
        PUSH1 1 ADD DUP1 PUSH1 3 GT PUSH1 :head JUMPI
        STOP""")
    cfg = build_cfg(disassemble(code))
    (loop,) = detect_loops(cfg)
    (edge,) = loop.back_edges
    result = run(code)
    hits = sum(1 for s, d in result.transfers if cfg.block_containing(s).id == edge[0] and d == edge[1])
    assert hits == 2


@pytest.mark.solc
def test_compiled_for_loop_is_one_loop(catalog):
    from conftest import compiled, need_series
    from snipcheck.pruner import annotate
    from snipcheck.symexec import explore

    version = need_series((0, 8))
    src = """pragma solidity ^0.8.0;
contract L {
    uint256 public total;
    function run(uint256 n) public {
        for (uint256 i = 0; i < n; i++) {
            total += i;
        }
    }
}"""
    out = compiled(src, version)
    code = out.runtime_bytecode
    static = build_cfg(annotate(disassemble(code), out.source_map))
    # the checked increment is an internal call, so the cycle closes only
    # once exploration supplies call-site -> continuation edges
    cfg = static.with_edges(explore(static, code).loop_edges())
    body = src.index("total += i")
    in_body = {b.id for b in cfg.blocks.values()
               if any(i.source_range and i.source_range[0] == body for i in b.instructions)}
    loops = [l for l in detect_loops(cfg) if in_body & l.members]
    assert len(loops) == 1
    assert in_body <= loops[0].members
