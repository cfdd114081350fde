"""Setup phase: run every active process solo until it is poised to incur an RMR,
then evict whoever ended up in the critical section."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..compliance import ScheduleArray, pids_of
from ..core import MemOp, MemoryModel, Read, Schedule, Step, pending_action, rmr_of, step
from ..errors import MutualExclusionViolation, SetupBudgetExceeded, SetupLemmaViolation
from .common import active_of, bit, execute_suffix, lemma_failure
from .config import Context


@dataclass
class SetupInfo:
    solo_lengths: dict[int, int] = field(default_factory=dict)
    entries_checked: int = 0
    evicted: int | None = None

    def to_json(self) -> dict:
        return {
            "solo_lengths": {str(p): n for p, n in sorted(self.solo_lengths.items())},
            "entries_checked": self.entries_checked,
            "evicted": self.evicted,
        }


def compute_sigma_p(ctx: Context, array: ScheduleArray, pid: int) -> Schedule:
    """Normal steps of ``pid`` alone after ``A[F ∪ {pid}]``, stopping just
    before its next RMR or after it finishes."""
    cfg = ctx.executor.run(array[array.fmax | bit(pid)]).config
    out: list[Step] = []
    while pid not in cfg.finished:
        act = pending_action(cfg, pid)
        if isinstance(act, MemOp) and rmr_of(ctx.model, cfg, pid, act.op, act.reg):
            break
        if len(out) >= ctx.cfg.step_budget:
            raise SetupBudgetExceeded(
                f"process {pid} took {len(out)} steps without an RMR",
                pid=pid,
                budget=ctx.cfg.step_budget,
            )
        cfg, _ = step(cfg, Step(pid))
        out.append(Step(pid))
    return tuple(out)


def setup_phase(ctx: Context, array: ScheduleArray) -> tuple[ScheduleArray, SetupInfo]:
    """Append the solo segments of the members of each subset to its entry."""
    active = active_of(array)
    solo = {p: compute_sigma_p(ctx, array, p) for p in active}
    solo_end = {p: ctx.executor.run(array[array.fmax | bit(p)] + solo[p]).config for p in active}
    info = SetupInfo({p: len(s) for p, s in solo.items()})
    entries: dict[int, Schedule] = {}
    for mask, sched in array.entries.items():
        members = [p for p in pids_of(mask) if p in solo]
        suffix = tuple(s for p in members for s in solo[p])
        before = ctx.executor.run(sched).config
        run, seg = execute_suffix(ctx, sched, suffix)
        _check_entry(ctx, mask, members, before, run.config, seg, solo_end)
        entries[mask] = sched + suffix
        info.entries_checked += 1
    return ScheduleArray(array.n, array.i, entries, array.smax, array.fmax), info


def _check_entry(ctx, mask, members, before, after, seg, solo_end) -> None:
    fail = lambda check, msg, **w: lemma_failure(SetupLemmaViolation, check, msg, subset=mask, **w)  # noqa: E731
    for e in seg:
        if e.rmr:
            raise fail("no-rmr", f"process {e.pid} incurred an RMR on {e.reg}", pid=e.pid)
        if e.kind == "leave_cs":
            raise fail("cs-not-left", f"process {e.pid} left the CS", pid=e.pid)
        if ctx.model is MemoryModel.DSM and e.is_memop and ctx.system.owner(e.reg) != e.pid:
            raise fail("owner-only", f"process {e.pid} accessed {e.reg} which it does not own", pid=e.pid)
        if ctx.model is MemoryModel.CC and e.is_memop and not isinstance(e.op, Read):
            raise fail("reads-only", f"process {e.pid} applied {e.kind} to {e.reg}", pid=e.pid)
    if after.finished != before.finished:
        raise fail("finished-unchanged", "the set of finished processes changed unexpectedly")
    for p in members:
        solo = solo_end[p]
        if after.state(p) != solo.state(p):
            raise fail("solo-state", f"process {p} is not in the state its solo run reached", pid=p)
        if p in after.finished:
            continue
        act = pending_action(after, p)
        if not isinstance(act, MemOp) or not rmr_of(ctx.model, after, p, act.op, act.reg):
            raise fail("poised-on-rmr", f"process {p} is not poised on an RMR", pid=p)
        if ctx.model is MemoryModel.DSM:
            for reg in ctx.system.owned_by(p):
                if after.val(reg) != solo.val(reg):
                    raise fail("owned-values", f"{reg} differs from the solo run of {p}", pid=p, register=reg)


def cs_eviction(ctx: Context, array: ScheduleArray) -> tuple[ScheduleArray, int | None]:
    """Remove the process (if any) that is in the CS at the end of ``E(A[S_max])``."""
    cfg = ctx.executor.run(array[array.smax]).config
    occupants = [p for p in cfg.in_cs() if p not in cfg.finished]
    if len(occupants) > 1:
        raise MutualExclusionViolation(f"processes {occupants} are all in the critical section", holder=occupants[0])
    if not occupants:
        return array, None
    gone = bit(occupants[0])
    entries = {m: s for m, s in array.entries.items() if not m & gone}
    return ScheduleArray(array.n, array.i, entries, array.smax & ~gone, array.fmax), occupants[0]

