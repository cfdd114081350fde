"""Command-line front end: ``rmesim run|check|explore|list-algorithms``.

Exit codes: 0 success, 1 check or safety failure, 2 mutual-exclusion
violation, 3 lemma violation or non-compliant round, 4 budget exhausted,
64 usage error, 65 malformed input, 66 missing input.  Every nonzero exit
writes one JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

from .adversary import AdversaryConfig, run
from .algorithms import get_algorithm, sample_algorithms
from .compliance import array_from_json, check_compliance
from .core import dumps
from .errors import (
    CompletionStall,
    EntryExecutionError,
    LemmaViolation,
    MutualExclusionViolation,
    RmeError,
    SetupBudgetExceeded,
    StateSpaceOverflow,
)
from .oracle import ExplorationBounds, explore

EX_OK, EX_FAIL, EX_ME, EX_LEMMA, EX_BUDGET = 0, 1, 2, 3, 4
EX_USAGE, EX_DATAERR, EX_NOINPUT = 64, 65, 66
EXPLORE_LIMIT = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2
        raise UsageError(message)


def _fail(code: int, error: str, message: str, **extra) -> int:
    return _report(code, {"error": error, "message": message, **extra})


def _report(code: int, payload: dict) -> int:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rmesim", description="Recoverable mutual exclusion RMR lower-bound adversary")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    algos = sorted(sample_algorithms())

    r = sub.add_parser("run", help="run the round-by-round adversary")
    r.add_argument("--n", type=int, required=True)
    kd = r.add_mutually_exclusive_group()
    kd.add_argument("--k", type=int)
    kd.add_argument("--d", type=int, help="set k = ceil(log2 n)^d")
    r.add_argument("--model", choices=["cc", "dsm"], default="cc")
    r.add_argument("--algorithm", choices=algos, default="cas-owner-lock")
    r.add_argument("--max-rounds", type=int, default=64)
    r.add_argument("--min-active", type=int)
    r.add_argument("--step-budget", type=int, default=10_000)
    r.add_argument("--verify", choices=["each-round", "final", "off"], default="each-round")
    r.add_argument("--verify-mode", choices=["exhaustive", "sampled"], default="exhaustive")
    r.add_argument("--sample-size", type=int, default=64)
    r.add_argument("--max-subsets", type=int, default=1 << 16)
    r.add_argument("--seed", type=int, help="enables seeded-random tie-breaking")
    r.add_argument("--out", help="run report path (default stdout)")
    r.add_argument("--csv", help="per-round CSV summary path")

    c = sub.add_parser("check", help="check a saved schedule array for i-compliance")
    c.add_argument("--array", required=True)
    c.add_argument("--algorithm", choices=algos)
    c.add_argument("--model", choices=["cc", "dsm"])
    c.add_argument("--mode", choices=["exhaustive", "sampled"], default="exhaustive")
    c.add_argument("--sample-size", type=int, default=64)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")

    e = sub.add_parser("explore", help="exhaustively explore a sample algorithm")
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--algorithm", choices=algos, default="cas-owner-lock")
    e.add_argument("--model", choices=["cc", "dsm"], default="cc")
    e.add_argument("--depth", type=int, default=60)
    e.add_argument("--max-crashes", type=int, default=1)
    e.add_argument("--fairness-window", type=int, default=200)
    e.add_argument("--max-states", type=int, default=2_000_000)
    e.add_argument("--force", action="store_true", help=f"allow n > {EXPLORE_LIMIT}")
    e.add_argument("--out")

    sub.add_parser("list-algorithms", help="list the sample algorithms")
    return p


def _config(args) -> AdversaryConfig:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    k = args.k
    if args.d is not None:
        if args.d < 0:
            raise UsageError("--d must be non-negative")
        k = max(1, math.ceil(math.log2(args.n)) if args.n > 1 else 1) ** args.d
    try:
        return AdversaryConfig(
            n=args.n,
            k=1 if k is None else k,
            model=args.model,
            algorithm=args.algorithm,
            max_rounds=args.max_rounds,
            min_active=args.min_active,
            step_budget=args.step_budget,
            tie_break="smallest-id" if args.seed is None else "seeded-random",
            seed=args.seed or 0,
            verify_each_round=args.verify == "each-round",
            verify_final=args.verify != "off",
            verify_mode=args.verify_mode,
            sample_size=args.sample_size,
            max_subsets=args.max_subsets,
        )
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None


def cmd_run(args) -> int:
    cfg = _config(args)
    try:
        result = run(cfg)
    except RmeError as err:
        partial = getattr(err, "partial", None)
        if partial is not None:
            _emit(dumps(partial.to_json()), args.out)
        extra = {}
        if isinstance(err, MutualExclusionViolation):
            path = Path(args.out + ".witness.json") if args.out else Path("counterexample-trace.json")
            path.write_text(dumps(err.witness or {"trace": []}))
            extra["counterexample"] = str(path)
        return _report(_run_code(err), {**err.to_json(), **extra})
    _emit(dumps(result.to_json()), args.out)
    if args.csv:
        Path(args.csv).write_text(result.to_csv())
    bad = [r.index for r in result.rounds if r.compliance is not None and not r.compliance.passed]
    if bad:
        return _fail(EX_LEMMA, "NON_COMPLIANT", f"rows {bad} failed the compliance check", rounds=bad)
    return EX_OK


def _run_code(err: RmeError) -> int:
    if isinstance(err, MutualExclusionViolation):
        return EX_ME
    if isinstance(err, LemmaViolation):
        return EX_LEMMA
    if isinstance(err, (SetupBudgetExceeded, CompletionStall, StateSpaceOverflow)):
        return EX_BUDGET
    return EX_FAIL


def cmd_check(args) -> int:
    path = Path(args.array)
    if not path.is_file():
        return _fail(EX_NOINPUT, "NO_INPUT", f"{path} does not exist")
    try:
        obj = json.loads(path.read_text())
        array = array_from_json(obj)
    except (ValueError, TypeError, AttributeError) as exc:
        return _fail(EX_DATAERR, "PARSE_ERROR", f"{path}: {exc}")
    name = args.algorithm or obj.get("algorithm") or "cas-owner-lock"
    model = args.model or obj.get("model") or "cc"
    try:
        system = get_algorithm(name).build(array.n, model)
    except (KeyError, ValueError) as exc:
        return _fail(EX_DATAERR, "PARSE_ERROR", str(exc))
    try:
        report = check_compliance(array, system, args.mode, sample_size=args.sample_size, seed=args.seed)
    except EntryExecutionError as err:
        return _report(EX_FAIL, err.to_json())
    _emit(dumps(report.to_json()), args.out)
    if report.passed:
        return EX_OK
    witnesses = {v.name: v.witness for v in report.verdicts.values() if not v.ok}
    return _fail(EX_FAIL, "NON_COMPLIANT", f"failed {', '.join(report.failures())}", failures=report.failures(), witnesses=witnesses)


def cmd_explore(args) -> int:
    if args.n > EXPLORE_LIMIT and not args.force:
        raise UsageError(f"--n above {EXPLORE_LIMIT} needs --force")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    try:
        bounds = ExplorationBounds(args.depth, args.max_crashes, args.fairness_window, args.max_states)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        report = explore(args.algorithm, args.n, bounds, args.model)
    except StateSpaceOverflow as err:
        return _report(EX_BUDGET, err.to_json())
    _emit(dumps(report.to_json()), args.out)
    if report.safe:
        return EX_OK
    failed = [k for k in ("mutual_exclusion", "a1") if report.to_json()[k]["status"] == "fail"]
    if report.faults:
        failed.append("faults")
    return _fail(EX_FAIL, "UNSAFE", f"violated: {', '.join(failed)}", violated=failed)


def cmd_list(args) -> int:
    rows = [{"name": a.name, "description": a.description} for a in sample_algorithms().values()]
    sys.stdout.write(dumps(sorted(rows, key=lambda r: r["name"])))
    return EX_OK


COMMANDS = {"run": cmd_run, "check": cmd_check, "explore": cmd_explore, "list-algorithms": cmd_list}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: run, check, explore or list-algorithms")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EX_USAGE, "USAGE", str(exc))


if __name__ == "__main__":
    sys.exit(main())
