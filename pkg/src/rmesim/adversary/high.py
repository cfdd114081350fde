"""High-contention round.

Large groups of processes poised on the same register are filtered down, two
processes per group (the alphas) take their steps and then crash and recover
to completion, and one more process per surviving group (the beta) takes a
step that is hidden from everyone else by the alphas' writes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

from ..compliance import ScheduleArray, interval
from ..core import CAS, Run, Schedule, Step, crash, step
from ..errors import CompletionStall, HighDegenerate, HighLemmaViolation, SimulationError
from .common import PoisedView, bit, execute_suffix, lemma_failure, mask_of, restrict
from .config import Context, Quotas, TieBreak

# plurality ties resolve toward the earlier kind
OP_ORDER = ("read", "fas", "fai", "cas")


@dataclass(frozen=True)
class GroupTable:
    """Everything the High branch decides about its groups, in stage order."""

    quotas: Quotas
    H: tuple[int, ...]
    H1: tuple[int, ...] = ()
    H2: tuple[int, ...] = ()
    H3: tuple[int, ...] = ()
    H4: tuple[int, ...] = ()
    H5: tuple[int, ...] = ()
    opt: str | None = None
    groups: tuple[tuple[int, ...], ...] = ()
    registers: tuple[str, ...] = ()
    alpha1: tuple[int, ...] = ()
    alpha2: tuple[int, ...] = ()
    before_alpha: tuple = ()  # register value just before alpha1 of each group
    D: tuple[int, ...] = ()
    H6: tuple[int, ...] = ()
    survivors: tuple[tuple[int, ...], ...] = ()
    beta: tuple[int | None, ...] = ()

    @property
    def alphas(self) -> list[int]:
        return sorted(self.alpha1 + self.alpha2)

    @property
    def betas(self) -> list[int]:
        return sorted(b for b in self.beta if b is not None)

    @property
    def sigma_alpha(self) -> Schedule:
        return tuple(Step(p) for a1, a2 in zip(self.alpha1, self.alpha2) for p in (a1, a2))

    def sizes(self) -> dict[str, int]:
        return {
            "H": len(self.H),
            "H1": len(self.H1),
            "H2": len(self.H2),
            "H3": len(self.H3),
            "H4": len(self.H4),
            "H5": len(self.H5),
            "groups": len(self.groups),
            "S_alpha": len(self.alphas),
            "D": len(self.D),
            "H6": len(self.H6),
            "S_beta_new": len(self.betas),
        }

    def to_json(self) -> dict:
        return {
            "sizes": self.sizes(),
            "opt": self.opt,
            "groups": [list(g) for g in self.groups],
            "registers": list(self.registers),
            "alpha1": list(self.alpha1),
            "alpha2": list(self.alpha2),
            "D": list(self.D),
            "beta": list(self.beta),
        }


def _chunks(members: list[int], size: int, keep_tail: int) -> list[list[int]]:
    """Split into chunks of ``size``; a short tail survives only if ``keep_tail`` allows it."""
    out = [members[i:i + size] for i in range(0, len(members), size)]
    if out and len(out[-1]) < size and (not keep_tail or len(out[-1]) < keep_tail):
        out.pop()
    return out


def _shrink(groups: list[list[int]], size: int, floor: int) -> list[list[int]]:
    """Truncate groups to ``size``; drop those below ``floor``."""
    return [g[:size] for g in groups if len(g) >= floor]


def plurality(ops) -> str | None:
    counts = Counter(op.kind for op in ops)
    if not counts:
        return None
    best = max(counts.values())
    return next(kind for kind in OP_ORDER if counts.get(kind) == best)


def high_filter_chain(view: PoisedView, high: list[int], quotas: Quotas, choose: TieBreak, register_order) -> GroupTable:
    """Carve contended buckets into groups and filter them. Pure over ``view``."""
    q = quotas
    buckets = view.group_by_register(register_order)
    high_set = set(high)
    order = [r for r in buckets if any(p in high_set for p in buckets[r])]
    if choose.randomized:
        order = choose.order(order)

    # H1: disjoint groups of q1 processes poised on the same register
    groups: list[list[int]] = []
    for reg in order:
        members = choose.order(p for p in buckets[reg] if p in high_set)
        groups += _chunks(members, q.q1, 0 if q.exact_quotas else q.min_group)
    h1 = tuple(sorted(p for g in groups for p in g))

    # H2: drop owners and last accessors of the registers the groups target
    targets = {view.targets[g[0]] for g in groups}
    bad = {view.owner.get(r) for r in targets} | {view.last.get(r) for r in targets}
    groups = [[p for p in g if p not in bad] for g in groups]
    h2 = tuple(sorted(p for g in groups for p in g))

    # H3: shrink
    floor3 = q.q3 if q.exact_quotas else q.min_group
    groups = _shrink(groups, q.q3, floor3)
    h3 = tuple(sorted(p for g in groups for p in g))

    # H4: keep only the plurality operation type
    opt = plurality(view.ops[p] for p in high)
    groups = [[p for p in g if view.ops[p].kind == opt] for g in groups]
    h4 = tuple(sorted(p for g in groups for p in g))

    # H5: shrink again
    floor5 = q.q5 if q.exact_quotas else q.min_group
    groups = _shrink(groups, q.q5, floor5)
    h5 = tuple(sorted(p for g in groups for p in g))

    return GroupTable(
        quotas=q,
        H=tuple(sorted(high)),
        H1=h1,
        H2=h2,
        H3=h3,
        H4=h4,
        H5=h5,
        opt=opt,
        groups=tuple(tuple(g) for g in groups),
        registers=tuple(view.targets[g[0]] for g in groups),
    )


def select_alphas(table: GroupTable, view: PoisedView, run_high: Run, choose: TieBreak) -> GroupTable:
    """Pick two processes per group and fix the register value each group's first step sees.

    For CAS groups the first alpha is one whose CAS will succeed, when there is one.
    """
    cfg = run_high.config
    a1s, a2s, before = [], [], []
    for group, reg in zip(table.groups, table.registers):
        members = choose.order(group)
        value = cfg.val(reg)
        first = members[0]
        if table.opt == "cas":
            winners = [p for p in members if _cas_changes(view.ops[p], value)]
            if winners:
                first = winners[0]
        second = next(p for p in members if p != first)
        a1s.append(first)
        a2s.append(second)
        before.append(value)
        cfg, _ = step(cfg, Step(first))
        cfg, _ = step(cfg, Step(second))
    return replace(table, alpha1=tuple(a1s), alpha2=tuple(a2s), before_alpha=tuple(before))


def _cas_changes(op, value) -> bool:
    return isinstance(op, CAS) and op.expected == value and op.new != value


@dataclass
class CompletionResult:
    schedule: Schedule
    run: Run  # execution of A[F ∪ S_alpha] ∘ sigma_alpha ∘ schedule
    segment: tuple
    registers: frozenset


def discover_sigma_F(ctx: Context, array: ScheduleArray, table: GroupTable) -> CompletionResult:
    """Crash every alpha, then run them round-robin until all have finished."""
    alphas = table.alphas
    base = array[array.fmax | mask_of(alphas)] + table.sigma_alpha
    run = ctx.executor.run(base)
    cfg = run.config
    sched: list[Step] = []
    events = []
    for p in alphas:
        cfg, e = _guarded(ctx, base, sched, cfg, crash(p))
        sched.append(crash(p))
        events.append(e)
    budget = ctx.cfg.step_budget * max(1, len(alphas))
    ptr = 0
    while any(p not in cfg.finished for p in alphas):
        if len(sched) >= budget:
            raise CompletionStall(
                f"alphas {[p for p in alphas if p not in cfg.finished]} did not finish within {budget} steps",
                witness={"pending": [p for p in alphas if p not in cfg.finished]},
                budget=budget,
            )
        p = alphas[ptr % len(alphas)]
        ptr += 1
        if p in cfg.finished:
            continue
        cfg, e = _guarded(ctx, base, sched, cfg, Step(p))
        sched.append(Step(p))
        events.append(e)
    regs = frozenset(e.reg for e in events if e.is_memop)
    return CompletionResult(tuple(sched), Run(cfg, run.trace + tuple(events)), tuple(events), regs)


def _guarded(ctx, base, sched, cfg, st):
    try:
        return step(cfg, st)
    except SimulationError:
        # replay through the executor so the error carries the whole execution
        execute_suffix(ctx, base, tuple(sched) + (st,))
        raise


def compute_D_and_betas(table: GroupTable, view: PoisedView, last_high: dict, touched: frozenset, choose: TieBreak) -> GroupTable:
    """Remove processes whose registers the completing alphas touched, then pick the betas.

    ``last_high`` maps registers to their last accessor at the end of
    ``E(A[S_H])``, before the alphas step.
    """
    alphas = set(table.alphas)
    hit = {view.owner.get(r) for r in touched} | {last_high.get(r) for r in touched}
    d = tuple(sorted(p for p in table.H5 if p not in alphas and p in hit))
    h6 = tuple(sorted(p for p in table.H5 if p not in alphas and p not in hit))
    h6_set = set(h6)
    survivors, betas = [], []
    for group in table.groups:
        rest = tuple(p for p in group if p in h6_set)
        survivors.append(rest)
        # quota counts the two alphas too
        if len(rest) + 2 >= table.quotas.q_beta and rest:
            betas.append(choose.order(rest)[0])
        else:
            betas.append(None)
    return replace(table, D=d, H6=h6, survivors=tuple(survivors), beta=tuple(betas))


def beta_schedule(table: GroupTable, j: int, view: PoisedView) -> Schedule:
    """Order group ``j``'s steps so that the beta's write is overwritten or absorbed."""
    a1, a2, b = table.alpha1[j], table.alpha2[j], table.beta[j]
    if b is None:
        return (Step(a1), Step(a2))
    if table.opt == "fai":
        return (Step(b), Step(a2))
    if table.opt == "cas" and view.ops[b].expected != table.before_alpha[j]:
        return (Step(b), Step(a1), Step(a2))
    return (Step(a1), Step(b), Step(a2))


@dataclass
class HighInfo:
    table: GroupTable
    completion_length: int = 0
    completion_registers: list[str] = field(default_factory=list)
    substitution_checks: int = 0
    entries_checked: int = 0
    f_growth: bool | None = None

    def to_json(self) -> dict:
        return {
            **self.table.to_json(),
            "completion_length": self.completion_length,
            "completion_registers": sorted(self.completion_registers),
            "substitution_checks": self.substitution_checks,
            "entries_checked": self.entries_checked,
            "f_growth": self.f_growth,
        }


def high_prepare(ctx: Context, array: ScheduleArray, view: PoisedView, high: list[int]) -> tuple[GroupTable, ScheduleArray, CompletionResult]:
    """Run the filter chain, pick alphas and discover how they complete."""
    table = high_filter_chain(view, high, ctx.quotas, ctx.choose, ctx.system.names)
    if not table.groups:
        raise HighDegenerate("no group of contended processes survived filtering", sizes=table.sizes())
    keep = array.fmax | mask_of(table.H5)
    high_a = restrict(array, keep)
    run_high = ctx.executor.run(high_a[high_a.smax])
    table = select_alphas(table, view, run_high, ctx.choose)
    completion = discover_sigma_F(ctx, high_a, table)
    last_high = {r: run_high.config.last_accessor(r) for r in ctx.system.names}
    table = compute_D_and_betas(table, view, last_high, completion.registers, ctx.choose)
    return table, high_a, completion


def high_phase(ctx: Context, array: ScheduleArray, table: GroupTable, completion: CompletionResult, view: PoisedView) -> tuple[ScheduleArray, HighInfo]:
    """Build the new row over ``[F ∪ S_alpha, F ∪ S_alpha ∪ betas]``."""
    info = HighInfo(table, len(completion.schedule), sorted(completion.registers))
    alphas = mask_of(table.alphas)
    lo = array.fmax | alphas
    hi = lo | mask_of(table.betas)
    high_b = restrict(array, hi)
    regs = set(table.registers)
    entries: dict[int, Schedule] = {}
    ref_values = None
    for mask in interval(lo, hi):
        sched = high_b[mask]
        fragments = [
            beta_schedule(table, j, view) if table.beta[j] is not None and mask & bit(table.beta[j]) else (Step(table.alpha1[j]), Step(table.alpha2[j]))
            for j in range(len(table.groups))
        ]
        sigma = tuple(s for frag in fragments for s in frag)
        fail = lambda check, msg, **w: lemma_failure(HighLemmaViolation, check, msg, subset=mask, **w)  # noqa: E731
        start = ctx.executor.run(sched).config
        run, seg = execute_suffix(ctx, sched, sigma)
        if {e.reg for e in seg if e.is_memop} != regs:
            raise fail("group-registers", "the substituted steps touched registers outside the groups")
        counts = Counter(e.pid for e in seg if e.rmr)
        if any(c > 1 for c in counts.values()) or any(counts[b] != 1 for b in table.betas if mask & bit(b)):
            raise fail("one-rmr-each", "a process took more than one RMR, or a beta took none")
        if any(ctx.system.owner(r) in table.betas for r in regs):
            raise fail("beta-owns-register", "a beta owns a group register")
        # the substituted order leaves memory exactly as sigma_alpha would
        plain, sub = start, start
        for j, frag in enumerate(fragments):
            for s in frag:
                sub, _ = step(sub, s)
            for s in (Step(table.alpha1[j]), Step(table.alpha2[j])):
                plain, _ = step(plain, s)
            info.substitution_checks += 1
            if sub.values != plain.values:
                raise fail("substitution-invisible", f"group {j} leaves a different memory", group=j)
        values = tuple(run.config.val(r) for r in table.registers)
        if ref_values is None:
            ref_values = values
        elif values != ref_values:
            raise fail("register-agreement", "group registers disagree across entries")
        done, tail = execute_suffix(ctx, sched + sigma, completion.schedule)
        if done.config.finished != start.finished | frozenset(table.alphas):
            raise fail("alphas-finish", "the completion did not finish exactly the alphas")
        if [(e.pid, e.kind, e.reg, e.response) for e in tail] != [(e.pid, e.kind, e.reg, e.response) for e in completion.segment]:
            raise fail("completion-replays", "the alphas' completion behaved differently in this entry")
        entries[mask] = sched + sigma + completion.schedule
        info.entries_checked += 1
    new_f = array.fmax | alphas
    info.f_growth = mask_of(ctx.executor.run(entries[hi]).config.finished) == (mask_of(ctx.executor.run(high_b[hi]).config.finished) | alphas)
    return ScheduleArray(array.n, array.i, entries, hi, new_f), info


__all__ = [
    "GroupTable",
    "OP_ORDER",
    "plurality",
    "high_filter_chain",
    "select_alphas",
    "discover_sigma_F",
    "compute_D_and_betas",
    "beta_schedule",
    "high_prepare",
    "high_phase",
    "HighInfo",
    "CompletionResult",
]
