"""CFG invariants shared by the oracle tests."""

from __future__ import annotations

from snipcheck.evm.cfg import EdgeKind
from snipcheck.evm.disasm import disassemble


def assert_partition(code: bytes, cfg) -> None:
    ins = disassemble(code)
    assert cfg.instructions() == ins
    seen = [i.pc for b in cfg.blocks.values() for i in b.instructions]
    assert len(seen) == len(set(seen)) == len(ins)


def assert_transfers_covered(code: bytes, cfg, transfers) -> None:
    for src_pc, dst_pc in transfers:
        src = cfg.block_containing(src_pc)
        assert src.last.pc == src_pc, "transfer out of the middle of a block"
        assert dst_pc in cfg.blocks, "transfer into the middle of a block"
        out = cfg.out_edges(src.id)
        ok = any(e.dst == dst_pc for e in out) or (
            any(e.kind is EdgeKind.UNRESOLVED for e in out) and src.last.name in ("JUMP", "JUMPI")
        )
        assert ok, f"no edge for transfer {src_pc:#x} -> {dst_pc:#x}"
