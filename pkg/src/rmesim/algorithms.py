"""Recoverable lock programs and checks of the adversary's standing assumptions.

Each algorithm is a factory: ``build(n, model)`` yields a :class:`~rmesim.core.System`
with one program per process.  Programs are small explicit state machines whose
states are tuples, so they hash, compare and serialize trivially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Iterable

from .core import (
    CAS,
    COMPLETE,
    ENTER_CS,
    FAS,
    LEAVE_CS,
    Action,
    Configuration,
    Event,
    MemOp,
    MemoryModel,
    Read,
    Register,
    Symbol,
    System,
    pending_action,
    start,
)

CS_REG = "cs"

# re-exported so callers can treat this module as the algorithm API
__all__ = [
    "Action",
    "Algorithm",
    "AssumptionReport",
    "MemOp",
    "ENTER_CS",
    "LEAVE_CS",
    "COMPLETE",
    "pending",
    "check_assumptions",
    "sample_algorithms",
    "get_algorithm",
]


def pending(config: Configuration, pid: int) -> Action:
    """The action ``pid`` would perform on its next normal step."""
    return pending_action(config, pid)


class StateMachine:
    """Base for table-driven programs.

    Subclasses implement ``action`` and ``advance`` on tuple states whose
    first element is a program-counter label.
    """

    start_state: tuple = ("start",)
    recover_entry: tuple = ("recover",)

    def __init__(self, pid: int, n: int) -> None:
        self.pid = pid
        self.n = n

    def initial_state(self) -> Hashable:
        return self.start_state

    def recover_state(self) -> Hashable:
        return self.recover_entry

    def action(self, state):  # pragma: no cover - abstract
        raise NotImplementedError

    def advance(self, state, response):  # pragma: no cover - abstract
        raise NotImplementedError


# The shared tail of every sample: one FAS on the unowned ``cs`` register
# inside the CS (so each CS visit costs an RMR), then leave.
def _cs_action(pc: str, pid: int) -> Action | None:
    if pc == "enter":
        return ENTER_CS
    if pc == "cs":
        return MemOp(FAS(pid), CS_REG)
    if pc == "leave":
        return LEAVE_CS
    if pc == "done":
        return COMPLETE
    return None


_CS_NEXT = {"enter": "cs", "cs": "leave"}


class CasOwnerLock(StateMachine):
    start_state = ("try",)
    recover_entry = ("recover",)

    def action(self, state):
        pc = state[0]
        if pc == "try":
            return MemOp(CAS(None, self.pid), "lock")
        if pc in ("spin", "recover"):
            return MemOp(Read(), "lock")
        if pc == "release":
            return MemOp(FAS(None), "lock")
        return _cs_action(pc, self.pid)

    def advance(self, state, response):
        pc = state[0]
        if pc == "try":
            return ("enter",) if response else ("spin",)
        if pc == "spin":
            return ("try",) if response is None else ("spin",)
        if pc == "recover":
            return ("enter",) if response == self.pid else ("try",)
        if pc == "leave":
            return ("release",)
        if pc == "release":
            return ("done",)
        if pc == "done":
            return ("finished",)
        return (_CS_NEXT[pc],)


class FasQueueLock(StateMachine):
    """Queue lock: FAS onto ``tail``, wait for the predecessor's ``done`` flag.

    Recover simply rejoins the queue, so a crash of the holder can leave a
    process waiting on itself.
    """

    start_state = ("join",)
    recover_entry = ("join",)

    def action(self, state):
        pc = state[0]
        if pc == "join":
            return MemOp(FAS(self.pid), "tail")
        if pc == "wait":
            return MemOp(Read(), f"done[{state[1]}]")
        if pc == "release":
            return MemOp(FAS(1), f"done[{self.pid}]")
        return _cs_action(pc, self.pid)

    def advance(self, state, response):
        pc = state[0]
        if pc == "join":
            return ("enter",) if response is None else ("wait", response)
        if pc == "wait":
            return ("enter",) if response == 1 else state
        if pc == "leave":
            return ("release",)
        if pc == "release":
            return ("done",)
        if pc == "done":
            return ("finished",)
        return (_CS_NEXT[pc],)


TRYING = Symbol("trying")
DONE = Symbol("done")


class DsmLocalSpinLock(StateMachine):
    """MCS-style lock. Each process spins on its own ``locked[p]`` register.

    Entry first resets the caller's own status, successor and flag registers,
    which are local in DSM.  Recover restarts from scratch.
    """

    start_state = ("status",)
    recover_entry = ("status",)

    def action(self, state):
        pc, p = state[0], self.pid
        if pc == "status":
            return MemOp(FAS(TRYING), f"status[{p}]")
        if pc == "clear-next":
            return MemOp(FAS(None), f"next[{p}]")
        if pc == "arm":
            return MemOp(FAS(1), f"locked[{p}]")
        if pc == "enqueue":
            return MemOp(FAS(p), "tail")
        if pc == "link":
            return MemOp(FAS(p), f"next[{state[1]}]")
        if pc == "spin":
            return MemOp(Read(), f"locked[{p}]")
        if pc == "unqueue":
            return MemOp(CAS(p, None), "tail")
        if pc == "await-next":
            return MemOp(Read(), f"next[{p}]")
        if pc == "handoff":
            return MemOp(FAS(0), f"locked[{state[1]}]")
        if pc == "mark-done":
            return MemOp(FAS(DONE), f"status[{p}]")
        return _cs_action(pc, p)

    def advance(self, state, response):
        pc = state[0]
        simple = {"status": "clear-next", "clear-next": "arm", "arm": "enqueue", "link": "spin", "leave": "unqueue", "handoff": "mark-done", "mark-done": "done"}
        if pc in simple:
            return (simple[pc],)
        if pc == "enqueue":
            return ("enter",) if response is None else ("link", response)
        if pc == "spin":
            return ("enter",) if response == 0 else state
        if pc == "unqueue":
            return ("mark-done",) if response else ("await-next",)
        if pc == "await-next":
            return state if response is None else ("handoff", response)
        if pc == "done":
            return ("finished",)
        return (_CS_NEXT[pc],)


class CasTreeLock(StateMachine):
    """Tournament tree of CAS locks, acquired leaf to root and released root to leaf.

    Recover climbs from the leaf while it still holds each node and resumes
    acquisition at the first node it does not hold.
    """

    start_state = ("acq", 0)
    recover_entry = ("rec", 0)

    def __init__(self, pid: int, n: int) -> None:
        super().__init__(pid, n)
        self.levels = tree_levels(n)

    def node(self, level: int) -> str:
        return f"node[{level}][{(self.pid - 1) >> (level + 1)}]"

    def action(self, state):
        pc = state[0]
        if pc == "acq":
            return MemOp(CAS(None, self.pid), self.node(state[1]))
        if pc in ("spin", "rec"):
            return MemOp(Read(), self.node(state[1]))
        if pc == "rel":
            return MemOp(FAS(None), self.node(state[1]))
        return _cs_action(pc, self.pid)

    def _climb(self, level: int):
        return ("enter",) if level + 1 == self.levels else ("acq", level + 1)

    def advance(self, state, response):
        pc = state[0]
        if pc == "acq":
            return self._climb(state[1]) if response else ("spin", state[1])
        if pc == "spin":
            return ("acq", state[1]) if response is None else state
        if pc == "rec":
            if response != self.pid:
                return ("acq", state[1])
            return ("enter",) if state[1] + 1 == self.levels else ("rec", state[1] + 1)
        if pc == "leave":
            return ("rel", self.levels - 1)
        if pc == "rel":
            return ("done",) if state[1] == 0 else ("rel", state[1] - 1)
        if pc == "done":
            return ("finished",)
        return (_CS_NEXT[pc],)


def tree_levels(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


class BrokenLock(StateMachine):
    """Deliberately unsafe: the acquiring CAS's outcome is never checked."""

    start_state = ("try",)
    recover_entry = ("try",)

    def action(self, state):
        pc = state[0]
        if pc == "try":
            return MemOp(CAS(None, self.pid), "lock")
        if pc == "release":
            return MemOp(FAS(None), "lock")
        return _cs_action(pc, self.pid)

    def advance(self, state, response):
        pc = state[0]
        if pc == "try":
            return ("enter",)
        if pc == "leave":
            return ("release",)
        if pc == "release":
            return ("done",)
        if pc == "done":
            return ("finished",)
        return (_CS_NEXT[pc],)


@dataclass(frozen=True)
class Algorithm:
    name: str
    description: str
    program: Callable[[int, int], StateMachine]
    registers: Callable[[int], list[Register]]

    def build(self, n: int, model: MemoryModel | str = MemoryModel.CC, crash_clears_cache: bool = True) -> System:
        programs = [self.program(p, n) for p in range(1, n + 1)]
        return System(programs, self.registers(n), model, crash_clears_cache, self.name)

    def start(self, n: int, model: MemoryModel | str = MemoryModel.CC, crash_clears_cache: bool = True) -> Configuration:
        return start(self.build(n, model, crash_clears_cache))


def _lock_regs(n: int) -> list[Register]:
    return [Register("lock"), Register(CS_REG)]


def _queue_regs(n: int) -> list[Register]:
    return [Register("tail"), Register(CS_REG)] + [Register(f"done[{p}]", None, 0) for p in range(1, n + 1)]


def _mcs_regs(n: int) -> list[Register]:
    regs = [Register("tail"), Register(CS_REG)]
    for p in range(1, n + 1):
        regs += [Register(f"status[{p}]", p), Register(f"next[{p}]", p), Register(f"locked[{p}]", p, 0)]
    return regs


def _tree_regs(n: int) -> list[Register]:
    regs = []
    for level in range(tree_levels(n)):
        width = max(1, math.ceil(n / 2 ** (level + 1)))
        regs += [Register(f"node[{level}][{i}]") for i in range(width)]
    return regs + [Register(CS_REG)]


_CATALOG = {
    a.name: a
    for a in [
        Algorithm("cas-owner-lock", "CAS(Null->pid) spin lock; Recover resumes the CS iff it still owns the lock", CasOwnerLock, _lock_regs),
        Algorithm("fas-queue-lock", "FAS queue lock with restart-on-recover (crash-fragile)", FasQueueLock, _queue_regs),
        Algorithm("dsm-local-spin-lock", "MCS-style lock spinning on an owned register; restart-on-recover (crash-fragile)", DsmLocalSpinLock, _mcs_regs),
        Algorithm("cas-tree-lock", "tournament tree of CAS locks with climbing recovery", CasTreeLock, _tree_regs),
        Algorithm("broken-lock", "unsafe: ignores the outcome of its acquiring CAS", BrokenLock, _lock_regs),
    ]
}


def sample_algorithms() -> dict[str, Algorithm]:
    return dict(_CATALOG)


def get_algorithm(name: str) -> Algorithm:
    try:
        return _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown algorithm {name!r}; known: {', '.join(sorted(_CATALOG))}") from None


# ---------------------------------------------------------------------------
# Synthetic poised processes (used for large-k high-contention fixtures)
# ---------------------------------------------------------------------------


class PoisedProgram(StateMachine):
    """Performs one configured operation, then behaves like ``CasOwnerLock`` on ``gate``.

    The optional ``touch`` register is written once after every crash, which
    lets fixtures control which registers the recovery path reaches.
    """

    start_state = ("first",)
    recover_entry = ("touch",)

    def __init__(self, pid: int, n: int, op, reg: str, touch: str | None = None) -> None:
        super().__init__(pid, n)
        self.op, self.reg, self.touch = op, reg, touch

    def action(self, state):
        pc = state[0]
        if pc == "first":
            return MemOp(self.op, self.reg)
        if pc == "touch":
            return MemOp(FAS(self.pid), self.touch) if self.touch else MemOp(Read(), "gate")
        if pc == "try":
            return MemOp(CAS(None, self.pid), "gate")
        if pc in ("spin", "recover"):
            return MemOp(Read(), "gate")
        if pc == "release":
            return MemOp(FAS(None), "gate")
        return _cs_action(pc, self.pid)

    def advance(self, state, response):
        pc = state[0]
        if pc == "first":
            return ("try",)
        if pc == "touch":
            return ("recover",) if self.touch else (("enter",) if response == self.pid else ("try",))
        if pc == "try":
            return ("enter",) if response else ("spin",)
        if pc == "spin":
            return ("try",) if response is None else ("spin",)
        if pc == "recover":
            return ("enter",) if response == self.pid else ("try",)
        if pc == "leave":
            return ("release",)
        if pc == "release":
            return ("done",)
        if pc == "done":
            return ("finished",)
        return (_CS_NEXT[pc],)


def poised_system(
    targets: dict[int, tuple[Any, str]],
    registers: Iterable[Register],
    model: MemoryModel | str = MemoryModel.DSM,
    touch: dict[int, str] | None = None,
) -> System:
    """A system where process ``p`` starts poised on ``targets[p] = (op, reg)``."""
    n = len(targets)
    touch = touch or {}
    programs = [PoisedProgram(p, n, *targets[p], touch=touch.get(p)) for p in range(1, n + 1)]
    regs = list(registers)
    names = {r.name for r in regs}
    regs += [Register(x) for x in ("gate", CS_REG) if x not in names]
    return System(programs, regs, model, True, "poised-fixture")


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    a1_ok: bool
    a2_max: int
    a2_budget: int
    a3_ok: bool
    a1_witness: dict | None = None

    @property
    def a2_ok(self) -> bool:
        return self.a2_max <= self.a2_budget

    def to_json(self) -> dict:
        return {
            "a1_ok": self.a1_ok,
            "a1_witness": self.a1_witness,
            "a2_max": self.a2_max,
            "a2_budget": self.a2_budget,
            "a2_ok": self.a2_ok,
            "a3_ok": self.a3_ok,
        }


def default_budget(n: int) -> int:
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def passage_rmrs(trace: Iterable[Event]) -> list[tuple[int, int]]:
    """(pid, rmrs) for every passage in the trace, open passages included.

    A passage starts at a process's first normal step after the start or after
    a crash, and ends at the next crash or at completion.
    """
    open_: dict[int, int] = {}
    done: list[tuple[int, int]] = []
    for e in trace:
        if e.kind == "crash":
            if e.pid in open_:
                done.append((e.pid, open_.pop(e.pid)))
            continue
        open_[e.pid] = open_.get(e.pid, 0) + (1 if e.rmr else 0)
        if e.kind == "complete":
            done.append((e.pid, open_.pop(e.pid)))
    done.extend(sorted(open_.items()))
    return done


def check_assumptions(trace: Iterable[Event], n: int, budget: int | None = None) -> AssumptionReport:
    trace = tuple(trace)
    budget = default_budget(n) if budget is None else budget
    a1_ok, witness = True, None
    in_cs: dict[int, int] = {}
    completed: set[int] = set()
    a3_ok = True
    for idx, e in enumerate(trace):
        if e.kind == "crash":
            in_cs.pop(e.pid, None)
            continue
        if e.pid in completed:
            a3_ok = False
        if e.kind == "enter_cs":
            in_cs[e.pid] = 0
        elif e.kind == "leave_cs":
            if in_cs.pop(e.pid, 1) == 0 and a1_ok:
                a1_ok, witness = False, {"pid": e.pid, "event_index": idx}
        elif e.kind == "complete":
            completed.add(e.pid)
        elif e.rmr and e.pid in in_cs:
            in_cs[e.pid] += 1
    a2_max = max((r for _, r in passage_rmrs(trace)), default=0)
    return AssumptionReport(a1_ok, a2_max, budget, a3_ok, witness)
