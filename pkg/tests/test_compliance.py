from __future__ import annotations

import json

import pytest

from rmesim.adversary import AdversaryConfig, run
from rmesim.algorithms import get_algorithm
from rmesim.compliance import (
    INVARIANTS,
    Executor,
    ScheduleArray,
    array_from_json,
    array_to_json,
    check_compliance,
    check_invariant,
    find_smax,
    full_row,
    interval,
    mask_of,
    pids_of,
    popcount,
)
from rmesim.core import FAS, MemOp, Read, Register, crash, normal
from rmesim.errors import NoUniqueSmax
from rmesim.oracle import compliance_by_definition

from conftest import script_system


@pytest.fixture(scope="module")
def owner_rows():
    return run(AdversaryConfig(n=3, model="cc")).rows


def lock(n, model="cc"):
    return get_algorithm("cas-owner-lock").build(n, model)


def test_mask_helpers():
    assert mask_of([1, 3]) == 0b101 and pids_of(0b101) == [1, 3] and popcount(0b1011) == 3
    assert list(interval(0b001, 0b111)) == [0b001, 0b011, 0b101, 0b111]
    assert list(interval(0b101, 0b101)) == [0b101]


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_base_row_is_compliant(n):
    report = check_compliance(full_row(n), lock(n))
    assert report.passed and report.vector() == (True,) * 10
    assert report.smax == (1 << n) - 1 and report.fmax == 0


def test_adversary_rows_are_compliant(owner_rows):
    for row in owner_rows:
        assert check_compliance(row, lock(3)).passed


def test_missing_entry_breaks_i2_and_dependent_invariants():
    row = full_row(3)
    del row.entries[0b010]
    report = check_compliance(row, lock(3))
    assert report.failures() == ["I2", "I3", "I4", "I5", "I8", "I9"]
    assert report.verdicts["I2"].witness["subsets"] == [0b010, 0b111]
    with pytest.raises(NoUniqueSmax):
        find_smax(row, Executor(lock(3)))


def test_outsider_step_breaks_i1():
    row = full_row(2)
    row.entries[0b01] = normal(2)
    v = check_invariant(row, "I1", lock(2))
    assert not v.ok and v.witness["process"] == 2


def test_added_crash_breaks_i6(owner_rows):
    row = owner_rows[-1]
    p = row.active()[0]
    bad = row.copy(entries={m: s + ((crash(p),) if m & (1 << (p - 1)) else ()) for m, s in row.entries.items()})
    report = check_compliance(bad, lock(3))
    assert not report.verdicts["I6"].ok
    assert report.verdicts["I6"].witness["process"] == p


def test_rmr_floor_is_i10(owner_rows):
    row = owner_rows[-1]
    assert check_compliance(row, lock(3)).passed
    higher = row.copy(i=row.i + 1)
    report = check_compliance(higher, lock(3))
    assert report.failures() == ["I10"]


def test_cs_entry_breaks_i7():
    row = full_row(1)
    row.entries[1] = normal(1, 1)  # CAS succeeds, then enter the CS
    assert not check_invariant(row, "I7", lock(1)).ok


def _writer_reader(order_top):
    sysm = script_system([[MemOp(FAS(1), "R")], [MemOp(Read(), "R")]], [Register("R")])
    return sysm, ScheduleArray(2, 0, {0: (), 1: normal(1), 2: normal(2), 3: normal(*order_top)})


def test_i5_shared_value_outside_last_accessor():
    # last accessor of R in A[S_max] is 1; entries without 1 agree on R
    sysm, row = _writer_reader((2, 1))
    assert check_invariant(row, "I5", sysm).ok
    # now the reader is last; entries without it disagree (None vs 1)
    sysm, row = _writer_reader((1, 2))
    v = check_invariant(row, "I5", sysm)
    assert not v.ok and v.witness["register"] == "R"
    for order in ((2, 1), (1, 2)):
        sysm, row = _writer_reader(order)
        assert compliance_by_definition(row, sysm)["I5"] == check_invariant(row, "I5", sysm).ok


def test_i4_metamorphic_finishing_everywhere_vs_once():
    sysm = lock(2)
    solo = normal(1, 1, 1, 1, 1, 1)  # CAS, enter, FAS cs, leave, release, complete
    only_top = ScheduleArray(2, 0, {0: (), 1: (), 2: (), 3: solo})
    assert not check_compliance(only_top, sysm).verdicts["I4"].ok
    # restricting to supersets of F and finishing in all of them restores I4
    consistent = ScheduleArray(2, 0, {1: solo, 3: solo})
    report = check_compliance(consistent, sysm)
    assert report.verdicts["I4"].ok and report.fmax == 1 and report.smax == 3


def test_i8_dsm_foreign_access():
    sysm = script_system([[MemOp(Read(), "mine")], [MemOp(Read(), "mine")]], [Register("mine", owner=1)], "dsm")
    row = ScheduleArray(2, 0, {0: (), 1: (), 2: normal(2), 3: normal(2)})
    v = check_invariant(row, "I8", sysm)
    assert not v.ok and v.witness["register"] == "mine" and v.witness["process"] == 2
    assert compliance_by_definition(row, sysm)["I8"] is False
    own = ScheduleArray(2, 0, {0: (), 1: normal(1), 2: (), 3: normal(1)})
    assert check_invariant(own, "I8", sysm).ok


def test_i9_cache_mismatch():
    sysm = script_system([[MemOp(Read(), "R")], [MemOp(FAS(1), "R")]], [Register("R")])
    # the reader reads last in A[S_max], so its copy is valid everywhere
    good = ScheduleArray(2, 0, {0: (), 1: normal(1), 2: normal(2), 3: normal(2, 1)})
    assert check_invariant(good, "I9", sysm).ok
    # the writer invalidates the reader's copy in A[S_max] only
    bad = ScheduleArray(2, 0, {0: (), 1: normal(1), 2: normal(2), 3: normal(1, 2)})
    v = check_invariant(bad, "I9", sysm)
    assert not v.ok and v.witness["process"] == 1
    for row in (good, bad):
        assert compliance_by_definition(row, sysm)["I9"] == check_invariant(row, "I9", sysm).ok


def test_sampled_mode_checks_required_entries():
    report = check_compliance(full_row(5), lock(5), "sampled", sample_size=4, seed=1)
    assert report.mode == "sampled" and report.sample_size == 4 and report.passed
    # S_max, F and the five singletons above F, plus four random entries
    assert report.entries_checked == 2 + 5 + 4


def test_exhaustive_degrades_above_max_subsets():
    report = check_compliance(full_row(4), lock(4), max_subsets=8)
    assert report.mode == "sampled" and report.warnings


def test_report_json_and_schema(owner_rows, schema):
    report = check_compliance(owner_rows[1], lock(3))
    doc = json.loads(json.dumps(report.to_json()))
    schema("compliance-report.schema.json", doc)
    assert [v["invariant"] for v in doc["verdicts"]] == list(INVARIANTS)
    row = full_row(3)
    del row.entries[5]
    schema("compliance-report.schema.json", check_compliance(row, lock(3)).to_json())


def test_array_json_round_trip(owner_rows, schema):
    row = owner_rows[-1]
    doc = json.loads(json.dumps(array_to_json(row, "cas-owner-lock", "cc")))
    schema("schedule-array.schema.json", doc)
    back = array_from_json(doc)
    assert back.entries == row.entries and back.i == row.i and back.n == row.n


@pytest.mark.parametrize(
    "bad",
    [[], {"n": 0, "i": 0}, {"n": 2, "i": -1}, {"n": 2, "i": 0, "entries": [{"subset_mask": 4, "schedule": []}]},
     {"n": 2, "i": 0, "entries": [{"subset_mask": 1, "schedule": []}, {"subset_mask": 1, "schedule": []}]}],
)
def test_array_json_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        array_from_json(bad)
