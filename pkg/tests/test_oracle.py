from __future__ import annotations

import random

import pytest

from rmesim.adversary import AdversaryConfig, run
from rmesim.algorithms import get_algorithm
from rmesim.compliance import INVARIANTS, ScheduleArray, check_compliance, full_row
from rmesim.core import FAS, MemOp, Read, Register, Step, crash, execute, normal, rmr_counts, schedule_from_json, start
from rmesim.errors import EntryExecutionError, MutualExclusionViolation, SimulationError, StateSpaceOverflow
from rmesim.oracle import ExplorationBounds, _moves, canonical, compliance_by_definition, explore, recount_rmr

from conftest import random_schedule, random_system, script_system


# --- RMR recount ----------------------------------------------------------


def test_recount_matches_core_on_1000_random_traces():
    rng = random.Random(20240)
    disagreements = 0
    for _ in range(1000):
        sysm = random_system(rng)
        trace = execute(start(sysm), random_schedule(rng, sysm, rng.randint(0, 40), crash_rate=0.15)).trace
        owners = {r.name: r.owner for r in sysm.registers}
        if recount_rmr(trace, sysm.model, owners, sysm.crash_clears_cache) != rmr_counts(trace):
            disagreements += 1
    assert disagreements == 0


def test_recount_dsm_all_owned_is_zero():
    sysm = script_system([[MemOp(FAS(1), "a"), MemOp(Read(), "a")], [MemOp(Read(), "b")]], [Register("a", 1), Register("b", 2)], "dsm")
    trace = execute(start(sysm), normal(1, 1, 2)).trace
    assert recount_rmr(trace, "dsm", {"a": 1, "b": 2}) == {}


def test_recount_cc_invalidation_forces_second_miss():
    sysm = script_system([[MemOp(Read(), "R"), MemOp(Read(), "R")], [MemOp(FAS(1), "R")]], [Register("R")])
    trace = execute(start(sysm), normal(1, 2, 1)).trace
    assert recount_rmr(trace, "cc", {"R": None}) == {1: 2, 2: 1}


# --- compliance differential ----------------------------------------------


def _sources():
    out = []
    for n in (1, 2, 3):
        for model in ("cc", "dsm"):
            sysm = get_algorithm("cas-owner-lock").build(n, model)
            out += [(row, sysm) for row in run(AdversaryConfig(n=n, model=model)).rows]
    tree = get_algorithm("cas-tree-lock").build(3, "cc")
    out += [(row, tree) for row in run(AdversaryConfig(n=3, algorithm="cas-tree-lock")).rows]
    return out


def _mutate(rng: random.Random, row: ScheduleArray) -> ScheduleArray:
    entries = dict(row.entries)
    n = row.n
    keys = sorted(entries)
    kind = rng.choice(["drop", "crash", "step", "outsider", "truncate", "swap", "index", "add", "none"])
    m = rng.choice(keys)
    members = [p for p in range(1, n + 1) if m >> (p - 1) & 1]
    if kind == "drop" and len(keys) > 1:
        del entries[m]
    elif kind == "crash" and members:
        entries[m] = entries[m] + (crash(rng.choice(members)),)
    elif kind == "step" and members:
        entries[m] = entries[m] + (Step(rng.choice(members)),)
    elif kind == "outsider":
        entries[m] = entries[m] + (Step(rng.randint(1, n)),)
    elif kind == "truncate" and entries[m]:
        entries[m] = entries[m][:-1]
    elif kind == "swap" and len(keys) > 1:
        other = rng.choice(keys)
        entries[m], entries[other] = entries[other], entries[m]
    elif kind == "add":
        missing = [x for x in range(1 << n) if x not in entries]
        if missing:
            entries[rng.choice(missing)] = entries[m]
    i = row.i + rng.choice([-1, 0, 1]) if kind == "index" else row.i
    return ScheduleArray(n, max(0, i), entries)


def _random_array(rng: random.Random):
    sysm = random_system(rng, n=rng.randint(1, 3))
    entries = {}
    for m in range(1 << sysm.n):
        if rng.random() < 0.8:
            members = [p for p in range(1, sysm.n + 1) if m >> (p - 1) & 1]
            sched = random_schedule(rng, sysm, rng.randint(0, 6), crash_rate=0.1)
            entries[m] = tuple(s for s in sched if s.pid in members) if rng.random() < 0.7 else sched
    return ScheduleArray(sysm.n, rng.randint(0, 2), entries), sysm


def _agree(array, sysm):
    try:
        report = check_compliance(array, sysm)
    except EntryExecutionError:
        return None
    oracle = compliance_by_definition(array, sysm)
    return {k: (report.verdicts[k].ok, oracle[k]) for k in INVARIANTS}


def test_checker_agrees_with_definition_on_100_arrays():
    rng = random.Random(7)
    sources = _sources()
    compared, failing, disagreements = 0, 0, []
    while compared < 100:
        if rng.random() < 0.6:
            row, sysm = rng.choice(sources)
            array = _mutate(rng, row)
        else:
            array, sysm = _random_array(rng)
        if not array.entries:
            continue
        verdicts = _agree(array, sysm)
        if verdicts is None:
            continue
        compared += 1
        failing += not all(a for a, _ in verdicts.values())
        disagreements += [(compared, k, v) for k, v in verdicts.items() if v[0] != v[1]]
    assert disagreements == []
    assert 10 < failing < 100  # both compliant and non-compliant arrays were exercised


def test_definition_on_base_row_and_single_entry():
    sysm = get_algorithm("cas-owner-lock").build(3)
    assert all(compliance_by_definition(full_row(3), sysm).values())
    single = ScheduleArray(1, 0, {1: normal(1)})
    lock1 = get_algorithm("cas-owner-lock").build(1)
    assert compliance_by_definition(single, lock1)["I2"] is False  # ⊥ at F = ∅
    ok = ScheduleArray(1, 0, {1: normal(1, 1, 1, 1, 1, 1)})  # finishes, so [F, S_max] = {{1}}
    assert compliance_by_definition(ok, lock1) == {k: True for k in INVARIANTS} == {k: v.ok for k, v in check_compliance(ok, lock1).verdicts.items()}


def test_definition_refuses_large_arrays():
    with pytest.raises(ValueError):
        compliance_by_definition(full_row(10), get_algorithm("cas-owner-lock").build(10))


# --- exploration ----------------------------------------------------------


def test_single_process_without_crashes_is_safe():
    report = explore("cas-owner-lock", 1, ExplorationBounds(max_crashes_per_process=0))
    assert report.safe and report.stalls == []


@pytest.mark.parametrize("model", ["cc", "dsm"])
def test_cas_owner_lock_two_processes(model):
    report = explore("cas-owner-lock", 2, ExplorationBounds(max_depth=60), model)
    assert report.safe and report.mutual_exclusion["status"] == "pass" and report.a1["status"] == "pass"
    assert report.states_explored > 100


def test_broken_lock_counterexample_replays():
    report = explore("broken-lock", 2, ExplorationBounds(max_depth=20))
    me = report.mutual_exclusion
    assert me["status"] == "fail" and me["steps"] <= 10
    sysm = get_algorithm("broken-lock").build(2)
    with pytest.raises(MutualExclusionViolation):
        execute(start(sysm), schedule_from_json(me["schedule"]))


def test_crash_free_queue_lock_is_safe_but_crashes_break_it():
    assert explore("fas-queue-lock", 2, ExplorationBounds(max_depth=40, max_crashes_per_process=0)).safe
    crashed = explore("fas-queue-lock", 2, ExplorationBounds(max_depth=40))
    assert not crashed.safe
    assert crashed.stalls  # restart-on-recover can also wait forever


def test_state_space_guard():
    with pytest.raises(StateSpaceOverflow):
        explore("cas-tree-lock", 3, ExplorationBounds(max_states=500))


def test_safety_report_schema(schema):
    schema("safety-report.schema.json", explore("broken-lock", 2, ExplorationBounds(max_depth=10)).to_json())
    schema("safety-report.schema.json", explore("cas-owner-lock", 2, ExplorationBounds(max_depth=10)).to_json())


def test_exploration_is_exhaustive_within_bounds():
    """Every crash-limited schedule of bounded length reaches a visited configuration."""
    bounds = ExplorationBounds(max_depth=8, fairness_window=0)
    sysm = get_algorithm("cas-owner-lock").build(2)
    rng = random.Random(3)
    visited = _visited(sysm, bounds)
    for _ in range(200):
        cfg = start(sysm)
        for _ in range(rng.randint(0, bounds.max_depth)):
            moves = _moves(cfg, bounds.max_crashes_per_process)
            if not moves:
                break
            try:
                cfg = execute(cfg, (rng.choice(moves),)).config
            except SimulationError:
                break
            assert canonical(cfg) in visited


def _visited(sysm, bounds):
    seen = {canonical(start(sysm))}
    frontier = [start(sysm)]
    for _ in range(bounds.max_depth):
        nxt = []
        for cfg in frontier:
            for st in _moves(cfg, bounds.max_crashes_per_process):
                try:
                    c2 = execute(cfg, (st,)).config
                except SimulationError:
                    continue
                if canonical(c2) not in seen:
                    seen.add(canonical(c2))
                    nxt.append(c2)
        frontier = nxt
    report = explore(sysm, bounds=bounds)
    assert report.states_explored == len(seen)
    return seen
