"""High-branch analysis at scales where a full schedule array cannot exist.

With quotas of thousands of processes the adversary's arrays are far too large
to build, but one High round only needs the entries between ``F ∪ S_alpha``
and ``S_B``.  This module plays that round from the initial configuration of a
synthetic poised system and evaluates the exact-quota bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..algorithms import AssumptionReport, check_assumptions, poised_system
from ..compliance import ScheduleArray, interval, mask_of
from ..core import CAS, FAS, MemoryModel, Register, Run, System
from .common import poised_view
from .config import AdversaryConfig, Context, within_log2
from .high import GroupTable, HighInfo, compute_D_and_betas, discover_sigma_F, high_filter_chain, high_phase, select_alphas
from .run import Bound, _high_bounds


@dataclass
class PoisedRound:
    table: GroupTable
    info: HighInfo
    bounds: list[Bound]
    assumptions: AssumptionReport

    def to_json(self) -> dict:
        return {
            "high": self.info.to_json(),
            "bounds": [b.to_json() for b in self.bounds],
            "assumptions": self.assumptions.to_json(),
        }


def exact_quota_fixture(
    k: int = 5120,
    extra: tuple[int, ...] = (100, 500),
    solo: int = 5600,
    touched: int = 16,
    model: MemoryModel | str = MemoryModel.CC,
) -> System:
    """Buckets of ``k + extra[j]`` processes poised on ``r[j]`` plus ``solo`` uncontended ones.

    Two in five contended processes are poised on FAS, the rest on CAS.  The
    first member of each bucket owns that bucket's register.  Every process's
    recovery writes one of ``touched`` registers owned by early members of
    the first bucket, so the completion phase discovers a few of them.
    """
    targets: dict[int, tuple] = {}
    registers: list[Register] = []
    pid = 1
    for j, more in enumerate(extra):
        registers.append(Register(f"r[{j}]", owner=pid))
        for _ in range(k + more):
            targets[pid] = (FAS(pid) if pid % 5 in (0, 1) else CAS(None, pid), f"r[{j}]")
            pid += 1
    for s in range(solo):
        registers.append(Register(f"solo[{s}]"))
        targets[pid] = (CAS(None, pid), f"solo[{s}]")
        pid += 1
    marked = [2 + 7 * t for t in range(touched)]
    registers += [Register(f"own[{q}]", owner=q) for q in marked]
    touch = {p: f"own[{marked[p % touched]}]" for p in targets}
    return poised_system(targets, registers, model, touch)


def poised_high_round(system: System, k: int, tie_break: str = "smallest-id", seed: int = 0) -> PoisedRound:
    """Play one High round from the initial configuration of ``system``."""
    n = system.n
    cfg = AdversaryConfig(n=n, k=k, model=system.model.value, tie_break=tie_break, seed=seed, verify_each_round=False)
    ctx = Context(cfg, system)
    run0 = Run(ctx.executor.c0, ())
    view = poised_view(run0, range(1, n + 1))
    buckets = view.group_by_register(system.names)
    high = sorted(p for ps in buckets.values() if len(ps) >= k for p in ps)

    table = high_filter_chain(view, high, ctx.quotas, ctx.choose, system.names)
    table = select_alphas(table, view, run0, ctx.choose)
    lo = mask_of(table.alphas)
    completion = discover_sigma_F(ctx, ScheduleArray(n, 0, {lo: ()}, lo, 0), table)
    last = {r: None for r in system.names}
    table = compute_D_and_betas(table, view, last, completion.registers, ctx.choose)

    hi = lo | mask_of(table.betas)
    sparse = ScheduleArray(n, 0, {m: () for m in interval(lo, hi)}, hi, 0)
    _, info = high_phase(ctx, sparse, table, completion, view)
    assumptions = check_assumptions(completion.run.trace, n, cfg.budget)
    held = within_log2(assumptions.a2_max, n)
    return PoisedRound(table, info, _high_bounds(ctx, table, held), assumptions)
