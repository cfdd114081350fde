"""Play the adversary over a grid of configurations and print one CSV line per round."""

from __future__ import annotations

import argparse
import csv
import sys
import time

from rmesim.adversary import AdversaryConfig, run
from rmesim.errors import RmeError


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[6, 8, 12])
    ap.add_argument("--k", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--model", nargs="+", default=["cc", "dsm"])
    ap.add_argument("--algorithm", nargs="+", default=["cas-owner-lock", "cas-tree-lock"])
    ap.add_argument("--min-active", type=int, default=1)
    args = ap.parse_args()

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["algorithm", "model", "n", "k", "round", "branch", "n_prev", "n_i", "fallback", "compliant", "a2_max", "witness_holds", "seconds", "error"])
    for alg in args.algorithm:
        for model in args.model:
            for k in args.k:
                for n in args.n:
                    cfg = AdversaryConfig(n=n, k=k, model=model, algorithm=alg, min_active=args.min_active)
                    t0 = time.perf_counter()
                    try:
                        result, error = run(cfg), ""
                    except RmeError as err:
                        result, error = err.partial, err.code
                    secs = f"{time.perf_counter() - t0:.3f}"
                    holds = result.witness.holds if result.witness else ""
                    for r in result.rounds:
                        compliant = "" if r.compliance is None else r.compliance.passed
                        a2 = "" if r.assumptions is None else r.assumptions.a2_max
                        out.writerow([alg, model, n, k, r.index, r.branch, r.active_before, r.active_after, r.fallback or "", compliant, a2, holds, secs, error])
                    if error and not result.rounds:
                        out.writerow([alg, model, n, k, "", "", "", "", "", "", "", holds, secs, error])
    return 0


if __name__ == "__main__":
    sys.exit(main())
