"""Schedule arrays indexed by process subsets, and the i-compliance checker."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

from .core import (
    MemoryModel,
    Run,
    Schedule,
    Section,
    System,
    execute,
    participants,
    schedule_from_json,
    schedule_to_json,
    start,
)
from .errors import EntryExecutionError, NoUniqueSmax, SimulationError

INVARIANTS = tuple(f"I{j}" for j in range(1, 11))
SCHEMA_VERSION = "1.0"

# ---------------------------------------------------------------------------
# Subset keys
# ---------------------------------------------------------------------------


def mask_of(pids: Iterable[int]) -> int:
    m = 0
    for p in pids:
        m |= 1 << (p - 1)
    return m


def pids_of(mask: int) -> list[int]:
    out, p = [], 1
    while mask:
        if mask & 1:
            out.append(p)
        mask >>= 1
        p += 1
    return out


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def interval(lo: int, hi: int) -> Iterator[int]:
    """All masks S with lo ⊆ S ⊆ hi, in increasing numeric order."""
    free = hi & ~lo
    sub = 0
    while True:
        yield lo | sub
        if sub == free:
            return
        sub = (sub - free) & free


# ---------------------------------------------------------------------------
# Arrays and execution cache
# ---------------------------------------------------------------------------


@dataclass
class ScheduleArray:
    n: int
    i: int
    entries: dict[int, Schedule] = field(default_factory=dict)
    smax: int | None = None  # cached, trusted only after find_smax
    fmax: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, mask: int) -> Schedule:
        return self.entries[mask]

    def __contains__(self, mask: int) -> bool:
        return mask in self.entries

    def keys(self) -> list[int]:
        return sorted(self.entries)

    def active(self) -> list[int]:
        return pids_of(self.smax & ~self.fmax)

    def copy(self, **changes: Any) -> "ScheduleArray":
        out = ScheduleArray(self.n, self.i, dict(self.entries), self.smax, self.fmax)
        for k, v in changes.items():
            setattr(out, k, v)
        return out


class Executor:
    """Executes schedules from the initial configuration, memoizing runs."""

    def __init__(self, system: System, limit: int = 50_000) -> None:
        self.system = system
        self.c0 = start(system)
        self.limit = limit
        self._runs: dict[Schedule, Run] = {}

    def run(self, schedule: Schedule) -> Run:
        schedule = tuple(schedule)
        hit = self._runs.get(schedule)
        if hit is None:
            hit = execute(self.c0, schedule)
            self._remember(schedule, hit)
        return hit

    def extend(self, base: Schedule, suffix: Schedule) -> tuple[Run, tuple]:
        """Run ``base ∘ suffix``; also returns the events of the suffix alone."""
        base = tuple(base)
        full = base + tuple(suffix)
        hit = self._runs.get(full)
        if hit is not None:
            return hit, hit.trace[len(hit.trace) - len(suffix):]
        first = self.run(base)
        cfg, more = execute(first.config, suffix)
        out = Run(cfg, first.trace + more)
        self._remember(full, out)
        return out, more

    def _remember(self, schedule: Schedule, run: Run) -> None:
        if len(self._runs) >= self.limit:
            self._runs.clear()
        self._runs[schedule] = run


@dataclass
class EntryFacts:
    """Everything the invariants need about one execution."""

    run: Run
    participants: frozenset
    rmr: dict
    ever_cs: frozenset
    accessors: dict  # register name -> set of pids

    @property
    def config(self):
        return self.run.config


def entry_facts(run: Run, schedule: Schedule) -> EntryFacts:
    rmr: dict[int, int] = {}
    ever_cs: set[int] = set()
    accessors: dict[str, set[int]] = {}
    for e in run.trace:
        if e.rmr:
            rmr[e.pid] = rmr.get(e.pid, 0) + 1
        if e.section_after is Section.CS:
            ever_cs.add(e.pid)
        if e.reg is not None:
            accessors.setdefault(e.reg, set()).add(e.pid)
    return EntryFacts(run, participants(schedule), rmr, frozenset(ever_cs), accessors)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class Verdict:
    name: str
    ok: bool
    witness: dict | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"invariant": self.name, "status": "pass" if self.ok else "fail"}
        if self.witness is not None:
            out["witness"] = self.witness
        return out


def _fail(name: str, explanation: str, subsets: Iterable[int] = (), **extra: Any) -> Verdict:
    w = {"explanation": explanation, "subsets": sorted(set(subsets))}
    w.update(extra)
    return Verdict(name, False, w)


@dataclass
class ComplianceReport:
    round_index: int
    mode: str
    verdicts: dict[str, Verdict]
    entries_checked: int
    sample_size: int | None = None
    smax: int | None = None
    fmax: int | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.ok for v in self.verdicts.values())

    def failures(self) -> list[str]:
        return [k for k in INVARIANTS if not self.verdicts[k].ok]

    def vector(self) -> tuple[bool, ...]:
        return tuple(self.verdicts[k].ok for k in INVARIANTS)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "round_index": self.round_index,
            "mode": self.mode,
            "sample_size": self.sample_size,
            "entries_checked": self.entries_checked,
            "smax": self.smax,
            "fmax": self.fmax,
            "passed": self.passed,
            "verdicts": [self.verdicts[k].to_json() for k in INVARIANTS],
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------------------
# The checker
# ---------------------------------------------------------------------------


def find_smax(array: ScheduleArray, executor: Executor) -> tuple[int, int]:
    """Return ``(smax, F(A[smax]))`` after verifying the interval structure."""
    keys = array.keys()
    if not keys:
        raise NoUniqueSmax("the array has no non-⊥ entry", witness={"subsets": []})
    union = 0
    for k in keys:
        union |= k
    if union not in array.entries:
        raise NoUniqueSmax(
            "no entry contains every other entry's subset",
            witness={"subsets": [union], "explanation": "union of all keys is ⊥"},
        )
    fmax = mask_of(_run_entry(array, union, executor).config.finished)
    outside = [k for k in keys if k & fmax != fmax]
    if outside:
        raise NoUniqueSmax(
            "an entry omits a finished process of A[S_max]",
            witness={"subsets": [outside[0], union], "explanation": "F(A[S_max]) ⊄ S"},
        )
    expected = 1 << popcount(union & ~fmax)
    if len(keys) != expected:
        missing = next(m for m in interval(fmax, union) if m not in array.entries)
        raise NoUniqueSmax(
            "the interval [F(A[S_max]), S_max] has a ⊥ entry",
            witness={"subsets": [missing, union], "explanation": "entry missing inside the interval"},
        )
    return union, fmax


def _run_entry(array: ScheduleArray, mask: int, executor: Executor) -> Run:
    try:
        return executor.run(array.entries[mask])
    except SimulationError as err:
        raise EntryExecutionError(
            f"entry {mask} is not executable: {err.message}",
            subset=mask,
            index=err.index,
            cause=err.code,
        ) from err


def _choose_entries(array: ScheduleArray, mode: str, smax: int | None, fmax: int | None, sample_size: int, seed: int) -> list[int]:
    keys = array.keys()
    if mode == "exhaustive" or smax is None:
        return keys
    chosen = {smax, fmax}
    for p in pids_of(smax & ~fmax):
        chosen.add(fmax | (1 << (p - 1)))
    rng = random.Random(seed)
    rest = [k for k in keys if k not in chosen]
    chosen.update(rng.sample(rest, min(sample_size, len(rest))))
    return sorted(k for k in chosen if k in array.entries)


def check_compliance(
    array: ScheduleArray,
    system: System,
    mode: str = "exhaustive",
    *,
    sample_size: int = 64,
    seed: int = 0,
    max_subsets: int = 1 << 16,
    executor: Executor | None = None,
) -> ComplianceReport:
    executor = executor or Executor(system)
    warnings: list[str] = []
    if mode not in ("exhaustive", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "exhaustive" and len(array) > max_subsets:
        warnings.append(f"{len(array)} entries exceed max_subsets={max_subsets}; degraded to sampled mode")
        mode = "sampled"

    verdicts: dict[str, Verdict] = {}
    smax = fmax = None
    try:
        smax, fmax = find_smax(array, executor)
        verdicts["I2"] = Verdict("I2", True)
    except NoUniqueSmax as err:
        w = dict(err.witness or {})
        w["explanation"] = err.message
        verdicts["I2"] = Verdict("I2", False, w)

    masks = _choose_entries(array, mode, smax, fmax, sample_size, seed)
    facts = {m: entry_facts(_run_entry(array, m, executor), array.entries[m]) for m in masks}
    for name, fn in _CHECKS.items():
        if name in _NEEDS_SMAX and smax is None:
            verdicts[name] = _fail(name, "no unique S_max; invariant is stated relative to S_max")
            continue
        verdicts[name] = fn(name, array, system, facts, smax, fmax)
    return ComplianceReport(
        round_index=array.i,
        mode=mode,
        verdicts={k: verdicts[k] for k in INVARIANTS},
        entries_checked=len(masks),
        sample_size=sample_size if mode == "sampled" else None,
        smax=smax,
        fmax=fmax,
        warnings=warnings,
    )


def check_invariant(array: ScheduleArray, which: str, system: System, executor: Executor | None = None) -> Verdict:
    return check_compliance(array, system, executor=executor).verdicts[which]


def _i1(name, array, system, facts, smax, fmax):
    for m, f in facts.items():
        extra = mask_of(f.participants) & ~m
        if extra:
            return _fail(name, "a process outside S takes a step in A[S]", [m], process=pids_of(extra)[0])
    return Verdict(name, True)


def _i3(name, array, system, facts, smax, fmax):
    ref = facts[smax].config
    for m, f in facts.items():
        for p in pids_of(m & smax):
            if f.config.state(p) != ref.state(p):
                return _fail(name, f"state of process {p} differs from A[S_max]", [m, smax], process=p)
    return Verdict(name, True)


def _i4(name, array, system, facts, smax, fmax):
    ref = facts[smax].config.finished
    for m, f in facts.items():
        if f.config.finished != ref:
            return _fail(name, "F differs from F(A[S_max])", [m, smax])
    return Verdict(name, True)


def _i5(name, array, system, facts, smax, fmax):
    ref = facts[smax].config
    for reg in system.names:
        w = ref.last_accessor(reg)
        want = ref.val(reg)
        y_mask, y = None, None
        for m, f in facts.items():
            v = f.config.val(reg)
            if w is not None and m >> (w - 1) & 1:
                if v != want:
                    return _fail(name, f"value of {reg} differs from A[S_max] although its last accessor {w} is in S", [m, smax], register=reg)
            elif y_mask is None:
                y_mask, y = m, v
            elif v != y:
                return _fail(name, f"entries without the last accessor disagree on {reg}", [y_mask, m], register=reg)
    return Verdict(name, True)


def _i6(name, array, system, facts, smax, fmax):
    for m, f in facts.items():
        cfg = f.config
        for p in range(1, system.n + 1):
            c = cfg.crash_count(p)
            if c > 1:
                return _fail(name, f"process {p} crashes {c} times", [m], process=p)
            if c and p not in cfg.finished:
                return _fail(name, f"process {p} crashed but has not finished", [m], process=p)
    return Verdict(name, True)


def _i7(name, array, system, facts, smax, fmax):
    for m, f in facts.items():
        bad = sorted(f.ever_cs - f.config.finished)
        if bad:
            return _fail(name, f"unfinished process {bad[0]} entered the critical section", [m], process=bad[0])
    return Verdict(name, True)


def _i8(name, array, system, facts, smax, fmax):
    if system.model is not MemoryModel.DSM:
        return Verdict(name, True)
    active = set(pids_of(smax & ~fmax))
    owned = [(r.name, r.owner) for r in system.registers if r.owner in active]
    for m, f in facts.items():
        for reg, owner in owned:
            others = sorted(f.accessors.get(reg, set()) - {owner})
            if others:
                return _fail(name, f"register {reg} of active process {owner} accessed by {others[0]}", [m], register=reg, process=others[0])
    return Verdict(name, True)


def _i9(name, array, system, facts, smax, fmax):
    if system.model is not MemoryModel.CC:
        return Verdict(name, True)
    ref = facts[smax].config
    for p in pids_of(smax & ~fmax):
        want = ref.caches[p - 1]
        for m, f in facts.items():
            if m >> (p - 1) & 1 and f.config.caches[p - 1] != want:
                return _fail(name, f"valid-cache set of active process {p} differs from A[S_max]", [m, smax], process=p)
    return Verdict(name, True)


def _i10(name, array, system, facts, smax, fmax):
    for m, f in facts.items():
        for p in pids_of(m):
            if p not in f.config.finished and f.rmr.get(p, 0) < array.i:
                return _fail(name, f"process {p} incurs {f.rmr.get(p, 0)} < {array.i} RMRs", [m], process=p)
    return Verdict(name, True)


_CHECKS: dict[str, Callable] = {
    "I1": _i1,
    "I3": _i3,
    "I4": _i4,
    "I5": _i5,
    "I6": _i6,
    "I7": _i7,
    "I8": _i8,
    "I9": _i9,
    "I10": _i10,
}
_NEEDS_SMAX = {"I3", "I4", "I5", "I8", "I9"}


# ---------------------------------------------------------------------------
# Array helpers and JSON
# ---------------------------------------------------------------------------


def full_row(n: int, schedule: Schedule = (), i: int = 0) -> ScheduleArray:
    everyone = (1 << n) - 1
    return ScheduleArray(n, i, {m: tuple(schedule) for m in range(everyone + 1)}, everyone, 0)


def array_to_json(array: ScheduleArray, algorithm: str | None = None, model: str | None = None) -> dict:
    out: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "n": array.n,
        "i": array.i,
        "smax": array.smax,
        "entries": [{"subset_mask": m, "schedule": schedule_to_json(array.entries[m])} for m in array.keys()],
    }
    if algorithm is not None:
        out["algorithm"] = algorithm
    if model is not None:
        out["model"] = model
    return out


def array_from_json(obj: Any) -> ScheduleArray:
    if not isinstance(obj, dict):
        raise ValueError("array must be a JSON object")
    n, i = obj.get("n"), obj.get("i")
    if not isinstance(n, int) or n < 1 or not isinstance(i, int) or i < 0:
        raise ValueError("array needs positive integer n and non-negative integer i")
    entries: dict[int, Schedule] = {}
    for e in obj.get("entries", []):
        m = e.get("subset_mask") if isinstance(e, dict) else None
        if not isinstance(m, int) or m < 0 or m >> n:
            raise ValueError(f"bad subset_mask in {e!r}")
        if m in entries:
            raise ValueError(f"duplicate subset_mask {m}")
        entries[m] = schedule_from_json(e.get("schedule"))
    smax = obj.get("smax")
    return ScheduleArray(n, i, entries, smax if isinstance(smax, int) else None, None)
