"""Helpers shared by the adversary phases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ..compliance import ScheduleArray, mask_of, pids_of
from ..core import MemOp, Run, Schedule, pending_action, schedule_to_json, trace_to_json
from ..errors import LemmaViolation, SimulationError
from .config import Context


def bit(pid: int) -> int:
    return 1 << (pid - 1)


def restrict(array: ScheduleArray, keep: int) -> ScheduleArray:
    """Drop every entry that is not a subset of ``keep``."""
    entries = {m: s for m, s in array.entries.items() if m & ~keep == 0}
    smax = None if array.smax is None else array.smax & keep
    return ScheduleArray(array.n, array.i, entries, smax, array.fmax)


def execute_suffix(ctx: Context, base: Schedule, suffix: Schedule) -> tuple[Run, tuple]:
    """Like ``Executor.extend`` but simulation errors carry the whole execution."""
    try:
        return ctx.executor.extend(base, suffix)
    except SimulationError as err:
        prefix = ctx.executor.run(base)
        idx = err.index or 0
        full = tuple(base) + tuple(suffix)[: idx + 1]
        err.trace = prefix.trace + tuple(err.trace)
        err.index = len(base) + idx
        err.context["index"] = err.index
        err.witness = {"schedule": schedule_to_json(full), "trace": trace_to_json(err.trace)}
        raise


def lemma_failure(cls: type[LemmaViolation], check: str, message: str, **witness) -> LemmaViolation:
    return cls(f"{check}: {message}", witness={"check": check, **witness}, check=check)


@dataclass(frozen=True)
class PoisedView:
    """Where each active process is poised at the end of ``E(A[S_max])``.

    ``accessed`` lists the registers each process has applied a memory
    operation to during that execution.
    """

    ops: dict  # pid -> Operation
    targets: dict  # pid -> register name
    owner: dict  # register -> owner pid or None
    last: dict  # register -> last accessor or None
    accessed: dict  # pid -> frozenset of register names
    values: dict  # register -> value

    def group_by_register(self, order: Iterable[str]) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {r: [] for r in order}
        for p in sorted(self.targets):
            out.setdefault(self.targets[p], []).append(p)
        return {r: ps for r, ps in out.items() if ps}


def poised_view(run: Run, active: Iterable[int]) -> PoisedView:
    cfg = run.config
    system = cfg.system
    ops, targets = {}, {}
    for p in active:
        act = pending_action(cfg, p)
        if not isinstance(act, MemOp):
            raise ValueError(f"process {p} is not poised on a memory operation")
        ops[p], targets[p] = act.op, act.reg
    accessed: dict[int, set[str]] = {p: set() for p in ops}
    for e in run.trace:
        if e.is_memop and e.pid in accessed:
            accessed[e.pid].add(e.reg)
    names = system.names
    return PoisedView(
        ops=ops,
        targets=targets,
        owner={r: system.owner(r) for r in names},
        last={r: cfg.last_accessor(r) for r in names},
        accessed={p: frozenset(rs) for p, rs in accessed.items()},
        values={r: cfg.val(r) for r in names},
    )


def active_of(array: ScheduleArray) -> list[int]:
    return pids_of(array.smax & ~array.fmax)


__all__ = ["bit", "restrict", "execute_suffix", "lemma_failure", "PoisedView", "poised_view", "active_of", "mask_of"]
