"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines
appear under "acceptance criteria" at the end of the session.
"""

from __future__ import annotations

import random
import time

import pytest

from rmesim.adversary import AdversaryConfig, run
from rmesim.adversary.analysis import exact_quota_fixture, poised_high_round
from rmesim.algorithms import get_algorithm
from rmesim.cli import main
from rmesim.compliance import check_compliance, pids_of
from rmesim.core import CAS, FAI, FAS, MemOp, Read, Register, Step, Symbol, apply_op, dumps, execute, normal, rmr_counts, start, step
from rmesim.oracle import ExplorationBounds, explore, recount_rmr

from conftest import ACCEPTANCE, random_schedule, random_system, script_system
from test_oracle import _agree, _mutate, _random_array, _sources

CONFIGS = [(n, model) for n in (6, 8, 12) for model in ("cc", "dsm")]

# broad sweep used for the per-branch bound criteria
SWEEP = [
    AdversaryConfig(n=n, k=k, model=model, algorithm=alg, min_active=1)
    for alg in ("cas-owner-lock", "cas-tree-lock")
    for model in ("cc", "dsm")
    for k in (1, 2, 3)
    for n in (6, 8, 12)
]


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append((name, ok, detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def owner_runs():
    out = {}
    for n, model in CONFIGS:
        t0 = time.perf_counter()
        result = run(AdversaryConfig(n=n, model=model, verify_each_round=False, verify_final=False))
        out[(n, model)] = (result, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def sweep():
    return [(cfg, run(cfg)) for cfg in SWEEP]


def _rounds(sweep, branch):
    return [(cfg, r) for cfg, result in sweep for r in result.completed if r.branch == branch]


def _a2_held(cfg, r):
    return 2**r.assumptions.a2_max <= cfg.n


# 1 --------------------------------------------------------------------------


def test_round_compliance(owner_runs):
    problems, rows = [], 0
    for (n, model), (result, secs) in owner_runs.items():
        t0 = time.perf_counter()
        sysm = get_algorithm("cas-owner-lock").build(n, model)
        for index, row in enumerate(result.rows):
            report = check_compliance(row, sysm, "exhaustive")
            rows += 1
            if row.i != index or not report.passed or report.mode != "exhaustive":
                problems.append(f"n={n} {model} row {index}: {report.failures()}")
        total = secs + time.perf_counter() - t0
        if len(result.completed) < 1:
            problems.append(f"n={n} {model}: no round completed")
        if total >= 60:
            problems.append(f"n={n} {model}: {total:.1f}s")
    record("round compliance", not problems, f"{rows} rows over {len(owner_runs)} configurations; problems={problems}")


# 2 --------------------------------------------------------------------------


def test_rmr_forcing_witness(owner_runs):
    problems = []
    for (n, model), (result, _) in owner_runs.items():
        row = result.rows[-1]
        sysm = get_algorithm("cas-owner-lock").build(n, model)
        final = execute(start(sysm), row[row.smax])
        owners = {r.name: r.owner for r in sysm.registers}
        rmrs = recount_rmr(final.trace, model, owners)
        active = pids_of(row.smax & ~row.fmax)
        entered = {e.pid for e in final.trace if e.kind == "enter_cs"}
        for p in active:
            if rmrs.get(p, 0) < row.i or final.config.crash_count(p) or p in entered:
                problems.append(f"n={n} {model} p={p}: rmr={rmrs.get(p, 0)} i={row.i}")
        if not active:
            problems.append(f"n={n} {model}: no active process")
    record("RMR forcing witness", not problems, f"final rows checked for {len(owner_runs)} configurations; problems={problems}")


# 3 --------------------------------------------------------------------------


def test_low_branch_bounds(sweep):
    checked, problems = 0, []
    for cfg, r in _rounds(sweep, "Low"):
        if not _a2_held(cfg, r):
            continue
        n, k = cfg.n, cfg.k
        L, I, edges = len(r.low.candidates), len(r.low.independent), r.low.edges
        checked += 1
        if not 2**edges <= n ** (3 * k * L):
            problems.append(f"{cfg.algorithm} n={n} k={k} round {r.index}: edges={edges} L={L}")
        if not n ** (I * 7 * k) >= 2**L:
            problems.append(f"{cfg.algorithm} n={n} k={k} round {r.index}: I={I} L={L}")
    ok = checked > 0 and not problems
    record("Low-branch bounds", ok, f"{checked} Low rounds with A2 held; problems={problems}")


# 4 --------------------------------------------------------------------------


def test_high_branch_bounds(sweep):
    # desk-scale locks exceed the A2 budget while alphas contend in completion,
    # so the exact-quota fixture is where the asserted case is exercised
    gated, informational, problems = 0, [], []
    for cfg, r in _rounds(sweep, "High"):
        table = r.high.table
        holds = 2 ** len(table.D) <= cfg.n ** (2 * len(table.alphas))
        informational.append(holds)
        if _a2_held(cfg, r):
            gated += 1
            if not holds:
                problems.append(f"n={cfg.n} round {r.index}: |D|={len(table.D)}")
    fixture = exact_quota_fixture()
    pf = poised_high_round(fixture, 5120)
    t, k = pf.table, 5120
    exact = {
        "A2": 2**pf.assumptions.a2_max <= fixture.n,
        "D": 2 ** len(t.D) <= fixture.n ** (2 * len(t.alphas)),
        "H1": 2 * len(t.H1) > len(t.H),
        "BetaSize": 2048 * k * len(t.betas) > 10 * len(t.H),
    }
    problems += [f"fixture {name}" for name, ok in exact.items() if not ok]
    detail = (
        f"fixture sizes {t.sizes()}; desk High rounds with A2 held: {gated}; "
        f"D bound on all {len(informational)} desk High rounds: {sum(informational)} hold; problems={problems}"
    )
    record("High-branch bounds", not problems, detail)


# 5 / 6 --------------------------------------------------------------------


def _high_rows(sweep):
    """(system, table, row, completion length) for every High round in the sweep."""
    for cfg, result in sweep:
        sysm = get_algorithm(cfg.algorithm).build(cfg.n, cfg.model)
        for r in result.completed:
            if r.branch == "High":
                yield sysm, r.high.table, result.rows[r.index], r.high.completion_length


def _split(table, mask, entry, completion_length):
    """Cut an entry of a High row into its base, per-group fragments and completion."""
    # a present beta adds a step, except under FAI where it takes the first alpha's place
    sizes = [3 if b is not None and mask >> (b - 1) & 1 and table.opt != "fai" else 2 for b in table.beta]
    body = entry[: len(entry) - completion_length]
    cut = len(body) - sum(sizes)
    fragments, at = [], cut
    for size in sizes:
        fragments.append(body[at : at + size])
        at += size
    return body[:cut], fragments


def test_substitution_invisibility(sweep):
    rounds, comparisons, problems = 0, 0, []
    for sysm, table, row, clen in _high_rows(sweep):
        rounds += 1
        for mask, entry in row.entries.items():
            base, fragments = _split(table, mask, entry, clen)
            plain = sub = execute(start(sysm), base).config
            for j, frag in enumerate(fragments):
                for s in frag:
                    sub, _ = step(sub, s)
                for s in (Step(table.alpha1[j]), Step(table.alpha2[j])):
                    plain, _ = step(plain, s)
                comparisons += 1
                if sub.values != plain.values:
                    problems.append(f"n={sysm.n} mask={mask} group={j}")
    ok = rounds > 0 and not problems
    record("substitution invisibility", ok, f"{rounds} High rounds, {comparisons} prefix comparisons; problems={problems}")


def test_f_growth(sweep):
    rounds, problems = 0, []
    for sysm, table, row, clen in _high_rows(sweep):
        rounds += 1
        base, _ = _split(table, row.smax, row[row.smax], clen)
        after = execute(start(sysm), row[row.smax]).config.finished
        before = execute(start(sysm), base).config.finished
        if after != before | set(table.alphas):
            problems.append(f"n={sysm.n}: {sorted(after)} vs {sorted(before)} + {table.alphas}")
    ok = rounds > 0 and not problems
    record("F-growth identity", ok, f"{rounds} High rounds; problems={problems}")


# 7 --------------------------------------------------------------------------


def test_oracle_equivalence():
    rng = random.Random(7)
    sources = _sources()
    arrays = disagreements = 0
    while arrays < 100:
        if rng.random() < 0.6:
            row, sysm = rng.choice(sources)
            array = _mutate(rng, row)
        else:
            array, sysm = _random_array(rng)
        if not array.entries or len(array) > 512:
            continue
        verdicts = _agree(array, sysm)
        if verdicts is None:
            continue
        arrays += 1
        disagreements += sum(a != b for a, b in verdicts.values())
    trng = random.Random(99)
    trace_diff = 0
    for _ in range(1000):
        sysm = random_system(trng)
        trace = execute(start(sysm), random_schedule(trng, sysm, trng.randint(0, 40), 0.15)).trace
        owners = {r.name: r.owner for r in sysm.registers}
        trace_diff += recount_rmr(trace, sysm.model, owners, sysm.crash_clears_cache) != rmr_counts(trace)
    ok = disagreements == 0 and trace_diff == 0
    record("oracle equivalence", ok, f"100 arrays: {disagreements} verdict disagreements; 1000 traces: {trace_diff} count disagreements")


# 8 --------------------------------------------------------------------------


def test_exhaustive_safety():
    t0 = time.perf_counter()
    results = []
    for n, depth in ((2, 60), (3, 80)):
        rep = explore("cas-owner-lock", n, ExplorationBounds(max_depth=depth, max_crashes_per_process=1))
        results.append((n, rep.mutual_exclusion["status"], rep.a1["status"], rep.states_explored))
    secs = time.perf_counter() - t0
    ok = all(me == "pass" and a1 == "pass" for _, me, a1, _ in results) and secs < 120
    record("exhaustive safety", ok, f"{results} in {secs:.1f}s")


# 9 --------------------------------------------------------------------------


def test_semantics_suite():
    checks = {
        "read": apply_op(5, Read()) == (5, 5),
        "fas": apply_op(5, FAS(9)) == (9, 5),
        "fai int": apply_op(5, FAI()) == (6, 5),
        "fai non-int no-op": apply_op(Symbol("x"), FAI()) == (Symbol("x"), Symbol("x")) and apply_op(None, FAI()) == (None, None),
        "cas hit": apply_op(1, CAS(1, 2)) == (2, True),
        "cas miss": apply_op(1, CAS(0, 2)) == (1, False),
    }
    cc = script_system([[MemOp(Read(), "R"), MemOp(Read(), "R"), MemOp(Read(), "R")], [MemOp(FAS(1), "R")]], [Register("R")])
    checks["cc invalidation"] = [e.rmr for e in execute(start(cc), normal(1, 1, 2, 1)).trace] == [True, False, True, True]
    dsm = script_system([[MemOp(FAS(1), "R"), MemOp(Read(), "R"), MemOp(CAS(1, 2), "R")], [MemOp(Read(), "R")]], [Register("R", 1)], "dsm")
    checks["dsm owner zero-RMR"] = [e.rmr for e in execute(start(dsm), normal(1, 1, 1, 2)).trace] == [False, False, False, True]
    failed = [k for k, v in checks.items() if not v]
    record("semantics suite", not failed, f"{len(checks)} exact checks; failed={failed}")


# 10 -------------------------------------------------------------------------


def test_determinism(tmp_path, capsys):
    cfg = AdversaryConfig(n=8, model="dsm")
    same_run = dumps(run(cfg).to_json()) == dumps(run(cfg).to_json())
    seeded = AdversaryConfig(n=8, tie_break="seeded-random", seed=11)
    same_seeded = dumps(run(seeded).to_json()) == dumps(run(seeded).to_json())
    outputs = []
    for _ in range(2):
        main(["run", "--n", "6", "--out", str(tmp_path / "r.json"), "--csv", str(tmp_path / "r.csv")])
        main(["explore", "--n", "2", "--depth", "30", "--out", str(tmp_path / "e.json")])
        outputs.append(tuple((tmp_path / f).read_bytes() for f in ("r.json", "r.csv", "e.json")))
    capsys.readouterr()
    ok = same_run and same_seeded and outputs[0] == outputs[1]
    record("determinism", ok, f"library runs {same_run}, seeded runs {same_seeded}, CLI files {outputs[0] == outputs[1]}")
