from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from rmesim.core import CAS, COMPLETE, ENTER_CS, FAI, FAS, LEAVE_CS, MemOp, Read, Register, Step, System, crash, start, step
from rmesim.errors import MutualExclusionViolation

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


class Script:
    """A program that replays a fixed list of actions, then passes through the CS.

    Recovery restarts the list from the beginning.
    """

    def __init__(self, actions):
        self.actions = list(actions) + [ENTER_CS, LEAVE_CS, COMPLETE]

    def initial_state(self):
        return 0

    def recover_state(self):
        return 0

    def action(self, state):
        return self.actions[state]

    def advance(self, state, response):
        return state + 1 if state + 1 < len(self.actions) else state


def script_system(scripts, registers, model="cc", crash_clears_cache=True) -> System:
    return System([Script(s) for s in scripts], registers, model, crash_clears_cache, "script")


def random_op(rng: random.Random):
    kind = rng.choice(["read", "fas", "fai", "cas"])
    val = lambda: rng.choice([None, 0, 1, 2])  # noqa: E731
    if kind == "read":
        return Read()
    if kind == "fas":
        return FAS(val())
    if kind == "fai":
        return FAI()
    return CAS(val(), val())


def random_system(rng: random.Random, n: int | None = None, model: str | None = None) -> System:
    n = n or rng.randint(1, 4)
    regs = [Register(f"r{j}", rng.choice([None] + list(range(1, n + 1))), rng.choice([None, 0])) for j in range(rng.randint(1, 4))]
    scripts = [[MemOp(random_op(rng), rng.choice(regs).name) for _ in range(rng.randint(0, 5))] for _ in range(n)]
    return script_system(scripts, regs, model or rng.choice(["cc", "dsm"]), rng.random() < 0.8)


def random_schedule(rng: random.Random, system: System, length: int, crash_rate: float = 0.1):
    """A schedule that never steps a finished process or breaks mutual exclusion."""
    cfg = start(system)
    out = []
    for _ in range(length):
        st = crash(rng.randint(1, system.n)) if rng.random() < crash_rate else Step(rng.randint(1, system.n))
        if not st.crash and st.pid in cfg.finished:
            continue
        try:
            cfg, _ = step(cfg, st)
        except MutualExclusionViolation:
            continue
        out.append(st)
    return tuple(out)


@pytest.fixture
def schema():
    from jsonschema import Draft202012Validator
    from referencing import Registry, Resource

    docs = {p.name: json.loads(p.read_text()) for p in SCHEMAS.glob("*.json")}
    registry = Registry().with_resources((name, Resource.from_contents(doc)) for name, doc in docs.items())

    def validate(name: str, instance) -> None:
        Draft202012Validator(docs[name], registry=registry).validate(instance)

    return validate


# acceptance criteria report one line each at the end of the session
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
