"""The round loop: setup, decision, then a Low or High round, until too few
processes remain active."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from ..algorithms import AssumptionReport, check_assumptions
from ..compliance import ComplianceReport, ScheduleArray, check_compliance, full_row, pids_of, popcount
from ..core import System, schedule_to_json
from ..errors import HighDegenerate, RmeError
from .common import PoisedView
from .config import AdversaryConfig, Context, ge_frac_log2, le_c_log2, within_log2
from .decision import Decision, decision_phase
from .high import GroupTable, HighInfo, high_phase, high_prepare
from .low import LowInfo, build_conflict_graph, independent_set, low_phase
from .setup import SetupInfo, cs_eviction, setup_phase

SCHEMA_VERSION = "1.0"


@dataclass
class Bound:
    name: str
    holds: bool
    asserted: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "holds": self.holds, "asserted": self.asserted, "detail": self.detail}


@dataclass
class RoundReport:
    index: int
    branch: str  # "Low", "High" or "Terminated"
    active_before: int
    active_after: int | None = None
    reason: str | None = None
    fallback: str | None = None
    setup: SetupInfo | None = None
    decision: Decision | None = None
    low: LowInfo | None = None
    high: HighInfo | None = None
    bounds: list[Bound] = field(default_factory=list)
    assumptions: AssumptionReport | None = None
    compliance: ComplianceReport | None = None

    @property
    def ratio(self) -> float | None:
        if self.active_after is None or not self.active_before:
            return None
        return self.active_after / self.active_before

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "branch": self.branch,
            "reason": self.reason,
            "fallback": self.fallback,
            "active_before": self.active_before,
            "active_after": self.active_after,
            "ratio": self.ratio,
            "setup": self.setup.to_json() if self.setup else None,
            "decision": self.decision.to_json() if self.decision else None,
            "low": self.low.to_json() if self.low else None,
            "high": self.high.to_json() if self.high else None,
            "bounds": [b.to_json() for b in self.bounds],
            "assumptions": self.assumptions.to_json() if self.assumptions else None,
            "compliance": self.compliance.to_json() if self.compliance else None,
        }


@dataclass
class FinalWitness:
    round: int
    subset: int
    active: list[int]
    rmrs: dict[int, int]
    crashes: dict[int, int]
    entered_cs: list[int]
    schedule: tuple

    @property
    def holds(self) -> bool:
        return all(self.rmrs[p] >= self.round and self.crashes[p] == 0 for p in self.active) and not self.entered_cs

    def to_json(self) -> dict:
        return {
            "rounds_completed": self.round,
            "subset": self.subset,
            "active_pids": self.active,
            "rmr_counts": {str(p): r for p, r in sorted(self.rmrs.items())},
            "crash_counts": {str(p): c for p, c in sorted(self.crashes.items())},
            "entered_cs": self.entered_cs,
            "holds": self.holds,
            "schedule": schedule_to_json(self.schedule),
        }


@dataclass
class RunResult:
    config: AdversaryConfig
    rounds: list[RoundReport]
    rows: list[ScheduleArray]
    witness: FinalWitness | None = None
    error: RmeError | None = None

    @property
    def completed(self) -> list[RoundReport]:
        return [r for r in self.rounds if r.branch != "Terminated"]

    def to_json(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_json(),
            "rounds": [r.to_json() for r in self.rounds],
            "rounds_completed": len(self.completed),
            "final_witness": self.witness.to_json() if self.witness else None,
        }
        if self.error is not None:
            out["error"] = self.error.to_json()
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "branch", "n_prev", "n_i", "ratio", "fallback", "compliant", "bounds_failed"])
        for r in self.rounds:
            ratio = "" if r.ratio is None else f"{r.ratio:.6f}"
            compliant = "" if r.compliance is None else r.compliance.passed
            failed = ";".join(b.name for b in r.bounds if not b.holds)
            w.writerow([r.index, r.branch, r.active_before, "" if r.active_after is None else r.active_after, ratio, r.fallback or "", compliant, failed])
        return buf.getvalue()


def base_row(n: int) -> ScheduleArray:
    """Row 0: every subset maps to the empty schedule."""
    return full_row(n)


def should_terminate(array: ScheduleArray, threshold: int, report: ComplianceReport | None = None) -> str | None:
    """Reason to stop before playing another round, or ``None``."""
    if report is not None and not report.passed:
        return "non-compliant: " + ",".join(report.failures())
    if popcount(array.smax & ~array.fmax) < threshold:
        return "below threshold"
    return None


def _verify(ctx: Context, array: ScheduleArray) -> ComplianceReport:
    cfg = ctx.cfg
    return check_compliance(
        array,
        ctx.system,
        cfg.verify_mode,
        sample_size=cfg.sample_size,
        seed=cfg.seed,
        max_subsets=cfg.max_subsets,
        executor=ctx.executor,
    )


def _low_bounds(ctx: Context, graph_edges: int, low: list[int], chosen: list[int], before: int, after: int, held: bool) -> list[Bound]:
    n, k = ctx.n, ctx.k
    return [
        Bound("edges", le_c_log2(graph_edges, 3 * k * len(low), n), held, f"{graph_edges} ≤ 3·k·|L|·log2(n)"),
        Bound("independent-set", ge_frac_log2(len(chosen), len(low), 7 * k, n), held, f"|I|={len(chosen)} ≥ |L|/(7k·log2 n)"),
        Bound("shrink", ge_frac_log2(after + 1, before, 7 * k, n), False, f"n_i + 1 ≥ n_(i-1)/(7k·log2 n) with n_i={after}"),
    ]


def _high_bounds(ctx: Context, table: GroupTable, held: bool) -> list[Bound]:
    n, k = ctx.n, ctx.k
    pf = table.quotas.exact_quotas
    d, a, b, h = len(table.D), len(table.alphas), len(table.betas), len(table.H)
    return [
        Bound("D-size", le_c_log2(d, 2 * a, n), held, f"|D|={d} ≤ 2·|S_alpha|·log2(n)"),
        Bound("H1-half", 2 * len(table.H1) > h, pf, f"|H1|={len(table.H1)} > |H|/2={h / 2}"),
        Bound("beta-size", 2048 * k * b > 10 * h, pf, f"|S_beta \\ S_alpha|={b} > |H|/(204.8k)"),
    ]


def _witness(ctx: Context, array: ScheduleArray) -> FinalWitness:
    run = ctx.executor.run(array[array.smax])
    active = pids_of(array.smax & ~array.fmax)
    rmrs = {p: 0 for p in active}
    entered = set()
    for e in run.trace:
        if e.pid in rmrs:
            if e.rmr:
                rmrs[e.pid] += 1
            if e.kind == "enter_cs":
                entered.add(e.pid)
    return FinalWitness(
        round=array.i,
        subset=array.smax,
        active=active,
        rmrs=rmrs,
        crashes={p: run.config.crash_count(p) for p in active},
        entered_cs=sorted(entered),
        schedule=array[array.smax],
    )


@dataclass
class _Outcome:
    row: ScheduleArray | None
    report: RoundReport


def play_round(ctx: Context, prev: ScheduleArray, index: int) -> _Outcome:
    before = popcount(prev.smax & ~prev.fmax)
    report = RoundReport(index, "Terminated", before)
    arr, report.setup = setup_phase(ctx, prev)
    arr, report.setup.evicted = cs_eviction(ctx, arr)
    if popcount(arr.smax & ~arr.fmax) == 0:
        report.reason = "no survivors"
        return _Outcome(None, report)
    decision = decision_phase(ctx, arr)
    report.decision = decision
    setup_trace = ctx.executor.run(arr[arr.smax]).trace

    low = decision.low
    if decision.branch == "High":
        try:
            table, high_a, completion = high_prepare(ctx, arr, decision.view, decision.high)
        except HighDegenerate:
            report.fallback = "no contended group survived filtering"
            table = None
        if table is not None:
            report.assumptions = check_assumptions(completion.run.trace, ctx.n, ctx.cfg.budget)
            held = within_log2(report.assumptions.a2_max, ctx.n)
            if table.betas:
                row, report.high = high_phase(ctx, high_a, table, completion, decision.view)
                report.branch = "High"
                report.bounds = _high_bounds(ctx, table, held)
                return _finish(row, report, index)
            report.fallback = "no beta survived"
            report.high = HighInfo(table, len(completion.schedule), sorted(completion.registers))
        low = low or pids_of(arr.smax & ~arr.fmax)

    return _low_round(ctx, arr, decision.view, low, report, index, setup_trace)


def _low_round(ctx: Context, arr: ScheduleArray, view: PoisedView, low: list[int], report: RoundReport, index: int, setup_trace) -> _Outcome:
    graph = build_conflict_graph(view, low)
    chosen = independent_set(graph, ctx.choose)
    row, _ = low_phase(ctx, arr, chosen)
    info = LowInfo(chosen, len(graph.edges), graph.edge_counts(), candidates=sorted(low))
    row, info.evicted = cs_eviction(ctx, row)
    info.entries_checked = len(row)
    report.low = info
    report.branch = "Low"
    if report.assumptions is None:
        report.assumptions = check_assumptions(setup_trace, ctx.n, ctx.cfg.budget)
    held = within_log2(report.assumptions.a2_max, ctx.n)
    after = popcount(row.smax & ~row.fmax)
    report.bounds = _low_bounds(ctx, len(graph.edges), low, chosen, report.active_before, after, held)
    if after == 0:
        report.branch = "Terminated"
        report.reason = "no survivors"
        return _Outcome(None, report)
    return _finish(row, report, index)


def _finish(row: ScheduleArray, report: RoundReport, index: int) -> _Outcome:
    row.i = index
    report.active_after = popcount(row.smax & ~row.fmax)
    return _Outcome(row, report)


def run(cfg: AdversaryConfig, system: System | None = None) -> RunResult:
    """Play rounds until termination. Errors are attached to the result and re-raised."""
    ctx = Context(cfg, system)
    row = base_row(ctx.n)
    result = RunResult(cfg, [], [row])
    verdict = _verify(ctx, row) if cfg.verify_each_round else None
    try:
        for index in range(1, cfg.max_rounds + 1):
            reason = should_terminate(row, cfg.threshold, verdict)
            if reason:
                result.rounds.append(RoundReport(index, "Terminated", popcount(row.smax & ~row.fmax), reason=reason))
                break
            outcome = play_round(ctx, row, index)
            if outcome.row is None:
                result.rounds.append(outcome.report)
                break
            row = outcome.row
            if cfg.verify_each_round:
                verdict = outcome.report.compliance = _verify(ctx, row)
            result.rows.append(row)
            result.rounds.append(outcome.report)
        else:
            result.rounds.append(RoundReport(cfg.max_rounds + 1, "Terminated", popcount(row.smax & ~row.fmax), reason="max rounds"))
        if cfg.verify_final and not cfg.verify_each_round:
            result.rounds[-1].compliance = _verify(ctx, row)
    except RmeError as err:
        err.context.setdefault("round", len(result.rows))
        result.error = err
        err.partial = result
        raise
    finally:
        result.witness = _witness(ctx, result.rows[-1])
    return result


__all__ = [
    "Bound",
    "RoundReport",
    "FinalWitness",
    "RunResult",
    "base_row",
    "should_terminate",
    "play_round",
    "run",
]
