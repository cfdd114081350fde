"""Low-contention round: pick an independent set of non-interfering processes and
let each of them perform its pending RMR once."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..compliance import ScheduleArray, pids_of
from ..core import MemoryModel, Read, Schedule, normal
from ..errors import LowLemmaViolation
from .common import PoisedView, bit, execute_suffix, lemma_failure, mask_of, restrict
from .config import Context, TieBreak


@dataclass
class ConflictGraph:
    vertices: list[int]
    edges: dict[tuple[int, int], set[str]] = field(default_factory=dict)  # (p, q) with p < q -> reasons

    def neighbours(self, v: int) -> set[int]:
        out = set()
        for p, q in self.edges:
            if p == v:
                out.add(q)
            elif q == v:
                out.add(p)
        return out

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {v: set() for v in self.vertices}
        for p, q in self.edges:
            adj[p].add(q)
            adj[q].add(p)
        return adj

    def edge_counts(self) -> dict[str, int]:
        out = {"same-register": 0, "owned-by": 0, "previously-accessed": 0}
        for reasons in self.edges.values():
            for r in reasons:
                out[r] += 1
        return out


def build_conflict_graph(view: PoisedView, vertices: list[int]) -> ConflictGraph:
    """Connect two processes when one's pending operation could interfere with the other.

    Edges come from poising on the same register, poising on a register the
    other owns, or poising on a register the other has already accessed.
    """
    graph = ConflictGraph(sorted(vertices))
    for a_i, p in enumerate(graph.vertices):
        for q in graph.vertices[a_i + 1:]:
            reasons = set()
            rp, rq = view.targets[p], view.targets[q]
            if rp == rq:
                reasons.add("same-register")
            if view.owner.get(rp) == q or view.owner.get(rq) == p:
                reasons.add("owned-by")
            if rp in view.accessed[q] or rq in view.accessed[p]:
                reasons.add("previously-accessed")
            if reasons:
                graph.edges[(p, q)] = reasons
    return graph


def independent_set(graph: ConflictGraph, choose: TieBreak | None = None) -> list[int]:
    """Greedy minimum-degree independent set (Turán-style guarantee)."""
    choose = choose or TieBreak()
    adj = graph.adjacency()
    chosen = []
    while adj:
        low = min(len(ns) for ns in adj.values())
        v = choose.pick([u for u, ns in adj.items() if len(ns) == low])
        chosen.append(v)
        gone = adj[v] | {v}
        for u in gone:
            adj.pop(u, None)
        for ns in adj.values():
            ns -= gone
    return sorted(chosen)


@dataclass
class LowInfo:
    independent: list[int]
    edges: int
    edge_reasons: dict[str, int]
    entries_checked: int = 0
    evicted: int | None = None
    candidates: list[int] = field(default_factory=list)  # the set L the graph was built on

    def to_json(self) -> dict:
        return {
            "L": self.candidates,
            "I": self.independent,
            "edges": self.edges,
            "edge_reasons": self.edge_reasons,
            "entries_checked": self.entries_checked,
            "evicted": self.evicted,
        }


def low_phase(ctx: Context, array: ScheduleArray, chosen: list[int]) -> tuple[ScheduleArray, dict[int, tuple]]:
    """Restrict to ``F ∪ chosen`` and append one step of each chosen member to every entry.

    Returns the new array and the segment events of every entry.
    """
    keep = array.fmax | mask_of(chosen)
    base = restrict(array, keep)
    entries: dict[int, Schedule] = {}
    segments: dict[int, tuple] = {}
    start_cfg: dict[int, object] = {}
    end_cfg: dict[int, object] = {}
    for mask, sched in base.entries.items():
        members = [p for p in pids_of(mask) if p in chosen]
        suffix = normal(*members)
        start_cfg[mask] = ctx.executor.run(sched).config
        run, seg = execute_suffix(ctx, sched, suffix)
        end_cfg[mask] = run.config
        segments[mask] = seg
        entries[mask] = sched + suffix
    _check_low(ctx, chosen, base.fmax, start_cfg, end_cfg, segments)
    return ScheduleArray(array.n, array.i, entries, base.smax, base.fmax), segments


def _check_low(ctx, chosen, fmax, start_cfg, end_cfg, segments) -> None:
    chosen_set = set(chosen)
    touched: dict[str, int] = {}
    for mask, seg in segments.items():
        fail = lambda check, msg, **w: lemma_failure(LowLemmaViolation, check, msg, subset=mask, **w)  # noqa: E731
        before, after = start_cfg[mask], end_cfg[mask]
        seen: dict[str, int] = {}
        for e in seg:
            if not e.is_memop or not e.rmr:
                raise fail("one-rmr-each", f"process {e.pid} did not take exactly its pending RMR", pid=e.pid)
            if e.reg in seen:
                raise fail("distinct-registers", f"{e.reg} accessed by {seen[e.reg]} and {e.pid}", register=e.reg)
            seen[e.reg] = e.pid
            touched[e.reg] = e.pid
            if ctx.model is MemoryModel.DSM:
                owner = ctx.system.owner(e.reg)
                if owner in chosen_set and owner != e.pid:
                    raise fail("foreign-owned", f"process {e.pid} accessed {e.reg} owned by {owner}", pid=e.pid)
            elif not isinstance(e.op, Read):
                for q in chosen_set - {e.pid}:
                    if e.reg in before.cache(q):
                        raise fail("cache-invalidation", f"process {e.pid} invalidated the copy of {e.reg} held by {q}", pid=e.pid)
        if after.finished != before.finished:
            raise fail("finished-unchanged", "a process finished during its single step")
        if any(e.kind == "leave_cs" for e in seg):
            raise fail("cs-not-left", "a process left the CS")
    # a touched register holds one value in entries with its accessor and one without
    for reg, pid in touched.items():
        for has in (True, False):
            values = {end_cfg[m].val(reg) for m in end_cfg if bool(m & bit(pid)) == has}
            if len(values) > 1:
                raise lemma_failure(LowLemmaViolation, "register-agreement", f"{reg} disagrees across entries", register=reg)
    for p in chosen:
        states = {end_cfg[m].state(p) for m in end_cfg if m & bit(p)}
        if len(states) > 1:
            raise lemma_failure(LowLemmaViolation, "state-agreement", f"process {p} is in different states", pid=p)
