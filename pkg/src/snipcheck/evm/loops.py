"""Natural-loop detection over a CFG (dominators + back edges)."""

from __future__ import annotations

from dataclasses import dataclass

from snipcheck.evm.cfg import Cfg


@dataclass(frozen=True)
class Loop:
    header: int
    members: frozenset[int]
    back_edges: tuple[tuple[int, int], ...]

    def __contains__(self, block_id: int) -> bool:
        return block_id in self.members


def _reverse_postorder(cfg: Cfg) -> list[int]:
    if cfg.entry_id is None:
        return []
    seen = {cfg.entry_id}
    order: list[int] = []
    stack = [(cfg.entry_id, iter(cfg.successors(cfg.entry_id)))]
    while stack:
        node, it = stack[-1]
        for succ in it:
            if succ not in seen:
                seen.add(succ)
                stack.append((succ, iter(cfg.successors(succ))))
                break
        else:
            stack.pop()
            order.append(node)
    order.reverse()
    return order


def dominators(cfg: Cfg) -> dict[int, int]:
    """Immediate dominators of every block reachable from the entry.

    Iterative scheme of Cooper, Harvey and Kennedy over reverse postorder.
    The entry maps to itself.
    """
    rpo = _reverse_postorder(cfg)
    if not rpo:
        return {}
    index = {b: i for i, b in enumerate(rpo)}
    entry = rpo[0]
    idom: dict[int, int] = {entry: entry}

    def intersect(a: int, b: int) -> int:
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for b in rpo[1:]:
            preds = [p for p in cfg.predecessors(b) if p in idom]
            if not preds:
                continue
            new = preds[0]
            for p in preds[1:]:
                new = intersect(p, new)
            if idom.get(b) != new:
                idom[b] = new
                changed = True
    return idom


def dominates(idom: dict[int, int], a: int, b: int) -> bool:
    while True:
        if a == b:
            return True
        parent = idom.get(b)
        if parent is None or parent == b:
            return False
        b = parent


def back_edges(cfg: Cfg, idom: dict[int, int] | None = None) -> list[tuple[int, int]]:
    idom = dominators(cfg) if idom is None else idom
    found = []
    for src in idom:
        for dst in cfg.successors(src):
            if dst in idom and dominates(idom, dst, src):
                found.append((src, dst))
    return sorted(set(found))


def detect_loops(cfg: Cfg) -> list[Loop]:
    """Natural loops of ``cfg``, one per header; back edges sharing a header
    are merged.  Nested loops come back as separate entries."""
    idom = dominators(cfg)
    by_header: dict[int, list[tuple[int, int]]] = {}
    for src, dst in back_edges(cfg, idom):
        by_header.setdefault(dst, []).append((src, dst))
    loops = []
    for header, edges in sorted(by_header.items()):
        members = {header}
        work = [src for src, _ in edges if src != header]
        members.update(work)
        while work:
            node = work.pop()
            for pred in cfg.predecessors(node):
                if pred not in members and pred in idom:
                    members.add(pred)
                    work.append(pred)
        loops.append(Loop(header, frozenset(members), tuple(edges)))
    return loops
