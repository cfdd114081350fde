"""Brute-force cross-checks that share as little code as possible with the main path.

* :func:`recount_rmr` recomputes RMR flags from raw events.
* :func:`compliance_by_definition` re-derives I1–I10 by enumerating every
  subset and replaying register values, caches and F from the traces.
* :func:`explore` enumerates interleavings (with crash injection) breadth-first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .algorithms import Algorithm, get_algorithm
from .core import (
    Configuration,
    MemoryModel,
    MutualExclusionViolation,
    Step,
    System,
    execute,
    schedule_to_json,
    start,
    step,
    trace_to_json,
)
from .errors import SimulationError, StateSpaceOverflow

SCHEMA_VERSION = "1.0"


# ---------------------------------------------------------------------------
# RMR recount
# ---------------------------------------------------------------------------


def recount_rmr(trace: Iterable, model: MemoryModel | str, owners: Mapping[str, int | None], crash_clears_cache: bool = True) -> dict[int, int]:
    """Per-process RMR totals, ignoring the flags stored in the events."""
    model = MemoryModel(model)
    counts: dict[int, int] = {}
    copies: dict[int, set] = {}
    for e in trace:
        kind = e.op.kind
        if kind == "crash":
            if crash_clears_cache:
                copies.pop(e.pid, None)
            continue
        if e.reg is None:
            continue
        if model is MemoryModel.DSM:
            remote = owners.get(e.reg) != e.pid
        elif kind == "read":
            mine = copies.setdefault(e.pid, set())
            remote = e.reg not in mine
            mine.add(e.reg)
        else:
            remote = True
            for held in copies.values():
                held.discard(e.reg)
        if remote:
            counts[e.pid] = counts.get(e.pid, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Compliance, straight from the definitions
# ---------------------------------------------------------------------------


def _write(value, op):
    kind, args = op.kind, op.args
    if kind == "read":
        return value
    if kind == "fas":
        return args[0]
    if kind == "fai":
        return value + 1 if type(value) is int else value
    if kind == "cas":
        same = value == args[0] and type(value) is type(args[0])
        return args[1] if same else value
    raise ValueError(kind)


@dataclass
class _Observed:
    values: dict
    last: dict
    finished: set
    crashes: dict
    ever_cs: set
    rmr: dict
    touched: dict
    caches: dict
    steppers: set
    states: dict


def _observe(system: System, schedule) -> _Observed:
    run = execute(start(system), schedule)
    values = {r.name: r.initial for r in system.registers}
    last: dict[str, int] = {}
    finished: set[int] = set()
    crashes: dict[int, int] = {}
    ever_cs: set[int] = set()
    touched: dict[str, set] = {}
    caches: dict[int, set] = {p: set() for p in range(1, system.n + 1)}
    for e in run.trace:
        kind = e.op.kind
        if kind == "crash":
            crashes[e.pid] = crashes.get(e.pid, 0) + 1
            if system.crash_clears_cache:
                caches[e.pid] = set()
        elif kind == "enter_cs":
            ever_cs.add(e.pid)
        elif kind == "complete":
            finished.add(e.pid)
        elif e.reg is not None:
            values[e.reg] = _write(values[e.reg], e.op)
            last[e.reg] = e.pid
            touched.setdefault(e.reg, set()).add(e.pid)
            if kind == "read":
                caches[e.pid].add(e.reg)
            else:
                for c in caches.values():
                    c.discard(e.reg)
    owners = {r.name: r.owner for r in system.registers}
    rmr = recount_rmr(run.trace, system.model, owners, system.crash_clears_cache)
    states = {p: run.config.state(p) for p in range(1, system.n + 1)}
    return _Observed(values, last, finished, crashes, ever_cs, rmr, touched, caches, {s.pid for s in schedule}, states)


def compliance_by_definition(array, system: System) -> dict[str, bool]:
    """Verdict per invariant, by exhaustive enumeration of all 2^n subsets."""
    n = system.n
    if (1 << n) > 512:
        raise ValueError("compliance_by_definition is limited to arrays with at most 512 subsets")
    subsets = [frozenset(p for p in range(1, n + 1) if m >> (p - 1) & 1) for m in range(1 << n)]
    entry = {}
    for m, S in enumerate(subsets):
        if m in array.entries:
            entry[S] = _observe(system, array.entries[m])

    # I2: look for the set T that makes the non-⊥ entries exactly [F(A[T]), T].
    smax = None
    for T in entry:
        F = entry[T].finished
        if all((S in entry) == (F <= S <= T) for S in subsets):
            smax = T
    out: dict[str, bool] = {"I2": smax is not None}

    out["I1"] = all(o.steppers <= S for S, o in entry.items())
    out["I6"] = all(
        all(o.crashes.get(p, 0) <= 1 and (o.crashes.get(p, 0) == 0 or p in o.finished) for p in range(1, n + 1))
        for o in entry.values()
    )
    out["I7"] = all(o.ever_cs <= o.finished for o in entry.values())
    out["I10"] = all(all(o.rmr.get(p, 0) >= array.i for p in S - o.finished) for S, o in entry.items())

    if smax is None:
        for name in ("I3", "I4", "I5", "I8", "I9"):
            out[name] = False
        return out

    top = entry[smax]
    out["I3"] = all(o.states[p] == top.states[p] for S, o in entry.items() for p in S & smax)
    out["I4"] = all(o.finished == top.finished for o in entry.values())

    i5 = True
    for reg in (r.name for r in system.registers):
        w = top.last.get(reg)
        outside = {o.values[reg] for S, o in entry.items() if w not in S}
        inside_ok = all(o.values[reg] == top.values[reg] for S, o in entry.items() if w in S)
        # values are hashable terms, so a set of size ≤ 1 means "one shared y_R"
        if not inside_ok or len(outside) > 1:
            i5 = False
    out["I5"] = i5

    active = smax - top.finished
    if system.model is MemoryModel.DSM:
        out["I8"] = all(
            o.touched.get(r.name, set()) <= {r.owner}
            for r in system.registers
            if r.owner in active
            for o in entry.values()
        )
    else:
        out["I8"] = True
    if system.model is MemoryModel.CC:
        out["I9"] = all(o.caches[p] == top.caches[p] for p in active for S, o in entry.items() if p in S)
    else:
        out["I9"] = True
    return out


# ---------------------------------------------------------------------------
# Exhaustive exploration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExplorationBounds:
    max_depth: int = 60
    max_crashes_per_process: int = 1
    fairness_window: int = 200
    max_states: int = 2_000_000
    max_stall_reports: int = 5

    def __post_init__(self) -> None:
        if self.max_depth < 0 or self.max_crashes_per_process < 0 or self.fairness_window < 0 or self.max_states < 1:
            raise ValueError("exploration bounds must be non-negative")


@dataclass
class SafetyReport:
    algorithm: str
    n: int
    model: str
    bounds: ExplorationBounds
    states_explored: int = 0
    depth_reached: int = 0
    mutual_exclusion: dict = field(default_factory=lambda: {"status": "pass"})
    a1: dict = field(default_factory=lambda: {"status": "pass"})
    faults: list = field(default_factory=list)
    stalls: list = field(default_factory=list)

    @property
    def safe(self) -> bool:
        return self.mutual_exclusion["status"] == "pass" and self.a1["status"] == "pass" and not self.faults

    def to_json(self) -> dict:
        b = self.bounds
        return {
            "schema_version": SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "n": self.n,
            "model": self.model,
            "bounds": {
                "max_depth": b.max_depth,
                "max_crashes_per_process": b.max_crashes_per_process,
                "fairness_window": b.fairness_window,
                "max_states": b.max_states,
            },
            "states_explored": self.states_explored,
            "depth_reached": self.depth_reached,
            "safe": self.safe,
            "mutual_exclusion": self.mutual_exclusion,
            "a1": self.a1,
            "faults": self.faults,
            "stalls": self.stalls,
        }


def canonical(cfg: Configuration) -> tuple:
    return (cfg.values, cfg.states, cfg.sections, cfg.caches, cfg.last, cfg.finished, cfg.crashes, cfg.cs_rmr)


def _path(parents: dict, key) -> list[Step]:
    out = []
    while parents[key] is not None:
        key, st = parents[key]
        out.append(st)
    return out[::-1]


def _witness(system: System, schedule: list[Step]) -> dict:
    try:
        trace = execute(start(system), schedule).trace
    except SimulationError as err:
        trace = err.trace
    return {"status": "fail", "steps": len(schedule), "schedule": schedule_to_json(schedule), "trace": trace_to_json(trace)}


def explore(
    algorithm: Algorithm | str | System,
    n: int | None = None,
    bounds: ExplorationBounds = ExplorationBounds(),
    model: MemoryModel | str = MemoryModel.CC,
) -> SafetyReport:
    if isinstance(algorithm, System):
        system = algorithm
    else:
        alg = get_algorithm(algorithm) if isinstance(algorithm, str) else algorithm
        system = alg.build(n, model)
    n = system.n
    report = SafetyReport(system.name, n, system.model.value, bounds)

    c0 = start(system)
    k0 = canonical(c0)
    parents: dict = {k0: None}
    configs: dict = {k0: c0}
    frontier = [c0]
    depth = 0
    while frontier and depth < bounds.max_depth:
        nxt = []
        for cfg in frontier:
            here = canonical(cfg)
            for st in _moves(cfg, bounds.max_crashes_per_process):
                try:
                    c2, ev = step(cfg, st)
                except MutualExclusionViolation:
                    if report.mutual_exclusion["status"] == "pass":
                        report.mutual_exclusion = _witness(system, _path(parents, here) + [st])
                    continue
                except SimulationError as err:
                    if len(report.faults) < 5:
                        w = _witness(system, _path(parents, here) + [st])
                        w["error"] = err.code
                        report.faults.append(w)
                    continue
                if ev.op.kind == "leave_cs" and not cfg.cs_rmr[st.pid - 1] and report.a1["status"] == "pass":
                    report.a1 = _witness(system, _path(parents, here) + [st])
                k2 = canonical(c2)
                if k2 not in parents:
                    parents[k2] = (here, st)
                    configs[k2] = c2
                    nxt.append(c2)
                    if len(parents) > bounds.max_states:
                        raise StateSpaceOverflow(f"more than {bounds.max_states} configurations", states=len(parents))
        frontier = nxt
        if nxt:
            depth += 1
    report.states_explored = len(parents)
    report.depth_reached = depth
    if bounds.fairness_window:
        report.stalls = _find_stalls(system, configs, parents, bounds)
    return report


def _moves(cfg: Configuration, max_crashes: int) -> list[Step]:
    n = cfg.system.n
    live = [p for p in range(1, n + 1) if p not in cfg.finished]
    return [Step(p) for p in live] + [Step(p, True) for p in live if cfg.crashes[p - 1] < max_crashes]


_PROGRESS = ("enter_cs", "complete")


def _find_stalls(system: System, configs: dict, parents: dict, bounds: ExplorationBounds) -> list[dict]:
    """States from which a crash-free round-robin schedule makes no progress.

    Progress means some process enters the CS or completes.  A repeated
    (configuration, round-robin position) pair without progress is a genuine
    livelock; running out of the fairness window is reported as a bounded stall.
    """
    n = system.n
    good: set = set()
    bad: set = set()
    reports: list[dict] = []
    for key, cfg in configs.items():
        seen: list = []
        seen_set: set = set()
        c, ptr, verdict, cycle = cfg, 0, None, False
        for _ in range(bounds.fairness_window):
            live = [p for p in range(1, n + 1) if p not in c.finished]
            if not live:
                verdict = True
                break
            node = (canonical(c), ptr)
            if node in good:
                verdict = True
                break
            if node in bad or node in seen_set:
                verdict, cycle = False, node in seen_set
                break
            seen.append(node)
            seen_set.add(node)
            pid = next(p for p in list(range(ptr + 1, n + 1)) + list(range(1, ptr + 1)) if p in live)
            try:
                c, ev = step(c, Step(pid))
            except SimulationError:
                verdict = True  # safety violations are reported by the search itself
                break
            ptr = pid
            if ev.op.kind in _PROGRESS:
                verdict = True
                break
        if verdict:
            good.update(seen)
            continue
        bad.update(seen)
        if len(reports) < bounds.max_stall_reports:
            schedule = _path(parents, key)
            reports.append({"schedule": schedule_to_json(schedule), "depth": len(schedule), "livelock_cycle": cycle})
    return reports
