"""Shared registers, schedules, executions and RMR accounting.

A :class:`System` fixes the process programs, the declared registers and the
memory model.  A :class:`Configuration` is an immutable snapshot of a system;
:func:`step` and :func:`execute` are pure functions from configurations to
configurations plus events.

Values are plain Python terms: ``int`` (never ``bool``), ``None`` for Null,
:class:`Symbol`, and tuples of values.  CAS responses are ``bool``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any, ClassVar, Hashable, Iterable, Mapping, NamedTuple, Protocol, Sequence, Union

from .errors import (
    ConfigError,
    MutualExclusionViolation,
    ProgramFault,
    SimulationError,
    StepOfFinished,
    UnknownProcess,
)

# ---------------------------------------------------------------------------
# Values and operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Symbol:
    name: str

    def __repr__(self) -> str:
        return f"Symbol({self.name!r})"


Value = Union[int, None, Symbol, tuple]


def is_value(v: Any) -> bool:
    if v is None or isinstance(v, Symbol):
        return True
    if isinstance(v, bool):
        return False
    if isinstance(v, int):
        return True
    if isinstance(v, tuple):
        return all(is_value(x) for x in v)
    return False


def is_integer(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@dataclass(frozen=True, slots=True)
class Read:
    kind: ClassVar[str] = "read"

    @property
    def args(self) -> tuple:
        return ()


@dataclass(frozen=True, slots=True)
class FAS:
    new: Value
    kind: ClassVar[str] = "fas"

    @property
    def args(self) -> tuple:
        return (self.new,)


@dataclass(frozen=True, slots=True)
class FAI:
    kind: ClassVar[str] = "fai"

    @property
    def args(self) -> tuple:
        return ()


@dataclass(frozen=True, slots=True)
class CAS:
    expected: Value
    new: Value
    kind: ClassVar[str] = "cas"

    @property
    def args(self) -> tuple:
        return (self.expected, self.new)


Operation = Union[Read, FAS, FAI, CAS]
OP_KINDS = ("read", "fas", "fai", "cas")


def apply_op(value: Value, op: Operation) -> tuple[Value, Any]:
    """Return ``(new_value, response)`` of ``op`` on a register holding ``value``."""
    if isinstance(op, Read):
        return value, value
    if isinstance(op, FAS):
        return op.new, value
    if isinstance(op, FAI):
        if is_integer(value):
            return value + 1, value
        return value, value
    if isinstance(op, CAS):
        if value == op.expected and type(value) is type(op.expected):
            return op.new, True
        return value, False
    raise TypeError(f"not an operation: {op!r}")


# ---------------------------------------------------------------------------
# Program actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class MemOp:
    op: Operation
    reg: str
    kind: ClassVar[str] = "memop"


@dataclass(frozen=True, slots=True)
class EnterCS:
    kind: ClassVar[str] = "enter_cs"
    args: ClassVar[tuple] = ()


@dataclass(frozen=True, slots=True)
class LeaveCS:
    kind: ClassVar[str] = "leave_cs"
    args: ClassVar[tuple] = ()


@dataclass(frozen=True, slots=True)
class CompleteSuperPassage:
    kind: ClassVar[str] = "complete"
    args: ClassVar[tuple] = ()


@dataclass(frozen=True, slots=True)
class Crash:
    kind: ClassVar[str] = "crash"
    args: ClassVar[tuple] = ()


Action = Union[MemOp, EnterCS, LeaveCS, CompleteSuperPassage]
ENTER_CS = EnterCS()
LEAVE_CS = LeaveCS()
COMPLETE = CompleteSuperPassage()
CRASH = Crash()


class Program(Protocol):
    """Deterministic per-process state machine. States must be hashable."""

    def initial_state(self) -> Hashable: ...

    def recover_state(self) -> Hashable: ...

    def action(self, state: Hashable) -> Action: ...

    def advance(self, state: Hashable, response: Any) -> Hashable: ...


# ---------------------------------------------------------------------------
# Static structure
# ---------------------------------------------------------------------------


class MemoryModel(str, enum.Enum):
    CC = "cc"
    DSM = "dsm"


class Section(str, enum.Enum):
    REMAINDER = "Remainder"
    ENTRY = "Entry"
    CS = "CS"
    EXIT = "Exit"
    RECOVER = "Recover"


@dataclass(frozen=True)
class Register:
    name: str
    owner: int | None = None
    initial: Value = None


class Step(NamedTuple):
    pid: int
    crash: bool = False

    def __repr__(self) -> str:
        return f"^{self.pid}" if self.crash else str(self.pid)


Schedule = tuple  # tuple[Step, ...]


def normal(*pids: int) -> Schedule:
    return tuple(Step(p) for p in pids)


def crash(pid: int) -> Step:
    return Step(pid, True)


def participants(schedule: Iterable[Step]) -> frozenset[int]:
    """P(schedule): the processes that take at least one step."""
    return frozenset(s.pid for s in schedule)


class System:
    """Programs, registers and memory model of one simulated run."""

    def __init__(
        self,
        programs: Sequence[Program],
        registers: Sequence[Register],
        model: MemoryModel | str = MemoryModel.CC,
        crash_clears_cache: bool = True,
        name: str = "",
    ) -> None:
        self.n = len(programs)
        if self.n < 1:
            raise ConfigError("NO_PROCESSES", "a system needs at least one process")
        self.programs = tuple(programs)
        self.registers = tuple(registers)
        self.model = MemoryModel(model)
        self.crash_clears_cache = crash_clears_cache
        self.name = name
        self.index: dict[str, int] = {}
        for i, reg in enumerate(self.registers):
            if reg.name in self.index:
                raise ConfigError("DUPLICATE_REGISTER", f"register {reg.name!r} declared twice", register=reg.name)
            if reg.owner is not None and not (isinstance(reg.owner, int) and 1 <= reg.owner <= self.n):
                raise ConfigError("UNKNOWN_OWNER", f"register {reg.name!r} owned by unknown process {reg.owner!r}", register=reg.name)
            if not is_value(reg.initial):
                raise ConfigError("BAD_VALUE", f"register {reg.name!r} has a non-value initial content")
            self.index[reg.name] = i
        self.owners = tuple(r.owner for r in self.registers)
        self.names = tuple(r.name for r in self.registers)

    def owner(self, reg: str) -> int | None:
        return self.owners[self.index[reg]]

    def owned_by(self, pid: int) -> list[str]:
        return [r.name for r in self.registers if r.owner == pid]

    def __repr__(self) -> str:
        return f"System({self.name or 'anonymous'}, n={self.n}, model={self.model.value})"


# ---------------------------------------------------------------------------
# Configurations and events
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class Configuration:
    system: System
    values: tuple
    states: tuple
    sections: tuple
    caches: tuple  # per process: frozenset of register indices
    last: tuple  # per register: pid or None
    finished: frozenset
    crashes: tuple
    cs_rmr: tuple

    def val(self, reg: str) -> Value:
        return self.values[self.system.index[reg]]

    def local_state(self, pid: int) -> Hashable:
        return self.states[pid - 1]

    def section(self, pid: int) -> Section:
        return self.sections[pid - 1]

    def state(self, pid: int) -> tuple[Hashable, Section]:
        """Local state plus section label; the unit compared across entries."""
        return (self.states[pid - 1], self.sections[pid - 1])

    def cache(self, pid: int) -> frozenset[str]:
        names = self.system.names
        return frozenset(names[i] for i in self.caches[pid - 1])

    def last_accessor(self, reg: str) -> int | None:
        return self.last[self.system.index[reg]]

    def crash_count(self, pid: int) -> int:
        return self.crashes[pid - 1]

    def in_cs(self) -> list[int]:
        return [i + 1 for i, s in enumerate(self.sections) if s is Section.CS]

    def key(self) -> tuple:
        return (self.values, self.states, self.sections, self.caches, self.last, self.finished, self.crashes, self.cs_rmr)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Configuration) and self.system is other.system and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


class Event(NamedTuple):
    pid: int
    op: Any  # Operation, a section action, or CRASH
    reg: str | None
    rmr: bool
    response: Any
    section_after: Section

    @property
    def kind(self) -> str:
        return self.op.kind

    @property
    def is_memop(self) -> bool:
        return self.reg is not None


class Run(NamedTuple):
    config: Configuration
    trace: tuple


def initial_config(
    programs: Mapping[int, Program] | Sequence[Program],
    registers: Sequence[Register],
    model: MemoryModel | str = MemoryModel.CC,
    crash_clears_cache: bool = True,
    name: str = "",
) -> Configuration:
    if isinstance(programs, Mapping):
        n = len(programs)
        if sorted(programs) != list(range(1, n + 1)):
            raise ConfigError("BAD_PROCESS_IDS", "process ids must be exactly 1..n")
        programs = [programs[p] for p in range(1, n + 1)]
    system = System(programs, registers, model, crash_clears_cache, name)
    return start(system)


def start(system: System) -> Configuration:
    n = system.n
    return Configuration(
        system=system,
        values=tuple(r.initial for r in system.registers),
        states=tuple(p.initial_state() for p in system.programs),
        sections=(Section.REMAINDER,) * n,
        caches=(frozenset(),) * n,
        last=(None,) * len(system.registers),
        finished=frozenset(),
        crashes=(0,) * n,
        cs_rmr=(False,) * n,
    )


def rmr_of(model: MemoryModel | str, config: Configuration, pid: int, op: Operation, reg: str) -> bool:
    sysm = config.system
    r = sysm.index[reg]
    if MemoryModel(model) is MemoryModel.DSM:
        return sysm.owners[r] != pid
    if isinstance(op, Read):
        return r not in config.caches[pid - 1]
    return True


def apply_register_op(config: Configuration, pid: int, op: Operation, reg: str) -> tuple[Configuration, Any]:
    """Apply ``op`` for ``pid`` touching only registers, caches and last accessors."""
    sysm = config.system
    r = sysm.index[reg]
    new_value, response = apply_op(config.values[r], op)
    values = config.values if new_value is config.values[r] else _put(config.values, r, new_value)
    last = _put(config.last, r, pid)
    caches = _cache_effect(config.caches, pid - 1, r, isinstance(op, Read))
    cfg = Configuration(sysm, values, config.states, config.sections, caches, last, config.finished, config.crashes, config.cs_rmr)
    return cfg, response


def _put(t: tuple, i: int, v: Any) -> tuple:
    return t[:i] + (v,) + t[i + 1 :]


def _cache_effect(caches: tuple, i: int, r: int, is_read: bool) -> tuple:
    if is_read:
        if r in caches[i]:
            return caches
        return _put(caches, i, caches[i] | {r})
    if not any(r in c for c in caches):
        return caches
    return tuple(c - {r} if r in c else c for c in caches)


def pending_action(config: Configuration, pid: int) -> Action:
    if pid in config.finished:
        raise StepOfFinished(f"process {pid} has finished its super-passage", pid=pid)
    return config.system.programs[pid - 1].action(config.states[pid - 1])


def step(config: Configuration, st: Step) -> tuple[Configuration, Event]:
    sysm = config.system
    pid = st.pid
    if not (isinstance(pid, int) and 1 <= pid <= sysm.n):
        raise UnknownProcess(f"no process {pid!r}", pid=pid)
    i = pid - 1
    prog = sysm.programs[i]

    if st.crash:
        section = Section.REMAINDER if pid in config.finished else Section.RECOVER
        caches = config.caches
        if sysm.crash_clears_cache and caches[i]:
            caches = _put(caches, i, frozenset())
        cfg = Configuration(
            sysm,
            config.values,
            _put(config.states, i, prog.recover_state()),
            _put(config.sections, i, section),
            caches,
            config.last,
            config.finished,
            _put(config.crashes, i, config.crashes[i] + 1),
            _put(config.cs_rmr, i, False),
        )
        return cfg, Event(pid, CRASH, None, False, None, section)

    if pid in config.finished:
        raise StepOfFinished(f"process {pid} has finished its super-passage", pid=pid)
    state = config.states[i]
    section = config.sections[i]
    if section is Section.REMAINDER:
        section = Section.ENTRY
    try:
        action = prog.action(state)
    except Exception as exc:  # program bugs surface as faults
        raise ProgramFault(f"program of process {pid} failed: {exc!r}", pid=pid) from exc

    if isinstance(action, MemOp):
        r = sysm.index.get(action.reg)
        if r is None:
            raise ProgramFault(f"process {pid} accessed undeclared register {action.reg!r}", pid=pid)
        op = action.op
        if not isinstance(op, (Read, FAS, FAI, CAS)):
            raise ProgramFault(f"process {pid} issued a malformed operation {op!r}", pid=pid)
        if sysm.model is MemoryModel.DSM:
            rmr = sysm.owners[r] != pid
        else:
            rmr = not isinstance(op, Read) or r not in config.caches[i]
        old = config.values[r]
        new_value, response = apply_op(old, op)
        if not is_value(new_value):
            raise ProgramFault(f"process {pid} wrote a non-value {new_value!r}", pid=pid)
        values = config.values if new_value is old else _put(config.values, r, new_value)
        caches = _cache_effect(config.caches, i, r, isinstance(op, Read))
        cs_rmr = config.cs_rmr
        if rmr and section is Section.CS and not cs_rmr[i]:
            cs_rmr = _put(cs_rmr, i, True)
        new_state = _advance(prog, pid, state, response)
        cfg = Configuration(
            sysm,
            values,
            _put(config.states, i, new_state),
            config.sections if section is config.sections[i] else _put(config.sections, i, section),
            caches,
            _put(config.last, r, pid),
            config.finished,
            config.crashes,
            cs_rmr,
        )
        return cfg, Event(pid, op, action.reg, rmr, response, section)

    finished = config.finished
    cs_rmr = config.cs_rmr
    if isinstance(action, EnterCS):
        if section not in (Section.ENTRY, Section.RECOVER):
            raise ProgramFault(f"process {pid} entered the CS from {section.value}", pid=pid)
        after = Section.CS
        cs_rmr = _put(cs_rmr, i, False)
    elif isinstance(action, LeaveCS):
        if section is not Section.CS:
            raise ProgramFault(f"process {pid} left the CS from {section.value}", pid=pid)
        after = Section.EXIT
    elif isinstance(action, CompleteSuperPassage):
        if section is not Section.EXIT:
            raise ProgramFault(f"process {pid} completed its super-passage from {section.value}", pid=pid)
        after = Section.REMAINDER
        finished = finished | {pid}
    else:
        raise ProgramFault(f"process {pid} yielded a malformed action {action!r}", pid=pid)
    cfg = Configuration(
        sysm,
        config.values,
        _put(config.states, i, _advance(prog, pid, state, None)),
        _put(config.sections, i, after),
        config.caches,
        config.last,
        finished,
        config.crashes,
        cs_rmr,
    )
    event = Event(pid, action, None, False, None, after)
    if after is Section.CS:
        others = [q for q in cfg.in_cs() if q != pid]
        if others:
            err = MutualExclusionViolation(f"processes {others[0]} and {pid} are both in the critical section", pid=pid, holder=others[0])
            err.config, err.event = cfg, event
            raise err
    return cfg, event


def _advance(prog: Program, pid: int, state: Hashable, response: Any) -> Hashable:
    try:
        return prog.advance(state, response)
    except Exception as exc:
        raise ProgramFault(f"program of process {pid} failed: {exc!r}", pid=pid) from exc


def execute(config: Configuration, schedule: Iterable[Step]) -> Run:
    """Fold :func:`step` over ``schedule``. Errors carry the offending index and the trace so far."""
    trace: list[Event] = []
    for idx, st in enumerate(schedule):
        try:
            config, event = step(config, st)
        except SimulationError as err:
            err.index = idx
            extra = (err.event,) if isinstance(err, MutualExclusionViolation) else ()
            err.trace = tuple(trace) + extra
            err.context["index"] = idx
            raise
        trace.append(event)
    return Run(config, tuple(trace))


def extend(run: Run, schedule: Iterable[Step]) -> Run:
    cfg, more = execute(run.config, schedule)
    return Run(cfg, run.trace + more)


def rmr_count(trace: Iterable[Event], pid: int) -> int:
    return sum(1 for e in trace if e.pid == pid and e.rmr)


def rmr_counts(trace: Iterable[Event]) -> dict[int, int]:
    out: dict[int, int] = {}
    for e in trace:
        if e.rmr:
            out[e.pid] = out.get(e.pid, 0) + 1
    return out


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def value_to_json(v: Any) -> Any:
    if v is None or isinstance(v, (bool, int)):
        return v
    if isinstance(v, Symbol):
        return {"sym": v.name}
    if isinstance(v, tuple):
        return {"tuple": [value_to_json(x) for x in v]}
    if isinstance(v, str):
        return {"str": v}
    raise TypeError(f"cannot serialize {v!r}")


def value_from_json(j: Any) -> Any:
    if j is None or isinstance(j, (bool, int)):
        return j
    if isinstance(j, dict):
        if "sym" in j:
            return Symbol(j["sym"])
        if "tuple" in j:
            return tuple(value_from_json(x) for x in j["tuple"])
        if "str" in j:
            return j["str"]
    raise ValueError(f"not a serialized value: {j!r}")


def schedule_to_json(schedule: Iterable[Step]) -> list[dict]:
    return [{"pid": s.pid, "crash": bool(s.crash)} for s in schedule]


def schedule_from_json(items: Any) -> Schedule:
    if not isinstance(items, list):
        raise ValueError("schedule must be a JSON array")
    out = []
    for it in items:
        if not isinstance(it, dict) or not isinstance(it.get("pid"), int) or isinstance(it.get("pid"), bool):
            raise ValueError(f"bad schedule step {it!r}")
        crash_flag = it.get("crash", False)
        if not isinstance(crash_flag, bool):
            raise ValueError(f"bad crash flag in {it!r}")
        out.append(Step(it["pid"], crash_flag))
    return tuple(out)


_SECTION_OPS = {"enter_cs": ENTER_CS, "leave_cs": LEAVE_CS, "complete": COMPLETE, "crash": CRASH}


def op_to_json(op: Any) -> dict:
    return {"kind": op.kind, "args": [value_to_json(a) for a in op.args]}


def op_from_json(j: dict) -> Any:
    kind, args = j["kind"], [value_from_json(a) for a in j.get("args", [])]
    if kind == "read":
        return Read()
    if kind == "fas":
        return FAS(*args)
    if kind == "fai":
        return FAI()
    if kind == "cas":
        return CAS(*args)
    if kind in _SECTION_OPS:
        return _SECTION_OPS[kind]
    raise ValueError(f"unknown operation kind {kind!r}")


def event_to_json(e: Event) -> dict:
    return {
        "pid": e.pid,
        "op": op_to_json(e.op),
        "reg": e.reg,
        "rmr": e.rmr,
        "response": value_to_json(e.response),
        "section": e.section_after.value,
    }


def event_from_json(j: dict) -> Event:
    return Event(j["pid"], op_from_json(j["op"]), j["reg"], j["rmr"], value_from_json(j["response"]), Section(j["section"]))


def trace_to_json(trace: Iterable[Event]) -> list[dict]:
    return [event_to_json(e) for e in trace]


def trace_from_json(items: list) -> tuple:
    return tuple(event_from_json(j) for j in items)


def dumps(obj: Any) -> str:
    """Canonical JSON text used by every report writer."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
