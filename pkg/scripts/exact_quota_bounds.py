"""Play one exact-quota High round on the synthetic poised fixture and print its bounds as JSON."""

from __future__ import annotations

import argparse
import sys

from rmesim.adversary.analysis import exact_quota_fixture, poised_high_round
from rmesim.core import dumps


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=5120, help="contention threshold; exact quotas need k >= 5120")
    ap.add_argument("--extra", type=int, nargs="+", default=[100, 500], help="bucket i holds k + extra[i] processes")
    ap.add_argument("--solo", type=int, default=5600, help="uncontended processes (raise n so the A2 budget holds)")
    ap.add_argument("--model", choices=["cc", "dsm"], default="cc")
    args = ap.parse_args()

    system = exact_quota_fixture(args.k, tuple(args.extra), args.solo, model=args.model)
    result = poised_high_round(system, args.k)
    sys.stdout.write(dumps({"n": system.n, "k": args.k, **result.to_json()}))
    return 0 if all(b.holds for b in result.bounds if b.asserted) else 1


if __name__ == "__main__":
    sys.exit(main())
