"""Adversary configuration, group quotas, tie-breaking and exact bound arithmetic."""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, TypeVar

from ..algorithms import default_budget, get_algorithm
from ..compliance import Executor
from ..core import MemoryModel, System

T = TypeVar("T")

EXACT_QUOTA_K = 160 * 32


@dataclass(frozen=True)
class AdversaryConfig:
    n: int
    k: int = 1
    model: str = "cc"
    algorithm: str = "cas-owner-lock"
    max_rounds: int = 64
    min_active: int | None = None  # None means k**3
    step_budget: int = 10_000
    tie_break: str = "smallest-id"
    seed: int = 0
    verify_each_round: bool = True
    verify_final: bool = True
    verify_mode: str = "exhaustive"
    sample_size: int = 64
    max_subsets: int = 1 << 16
    crash_clears_cache: bool = True
    a2_budget: int | None = None  # None means ceil(log2 n)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.min_active is not None and self.min_active < 1:
            raise ValueError("min_active must be at least 1")
        MemoryModel(self.model)
        if self.tie_break not in ("smallest-id", "seeded-random"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.verify_mode not in ("exhaustive", "sampled"):
            raise ValueError(f"unknown verify_mode {self.verify_mode!r}")
        if self.max_rounds < 0 or self.step_budget < 1:
            raise ValueError("max_rounds must be ≥ 0 and step_budget ≥ 1")
        get_algorithm(self.algorithm)

    @property
    def threshold(self) -> int:
        return self.k**3 if self.min_active is None else self.min_active

    @property
    def budget(self) -> int:
        return default_budget(self.n) if self.a2_budget is None else self.a2_budget

    def to_json(self) -> dict:
        out = asdict(self)
        out["min_active"] = self.threshold
        out["a2_budget"] = self.budget
        return out


@dataclass(frozen=True)
class Quotas:
    q1: int
    q3: int
    q5: int
    q_beta: int
    min_group: int
    exact_quotas: bool


def quotas_for(k: int) -> Quotas:
    """Group sizes for the high-contention filter chain.

    With ``k ≥ 5120`` the sizes are exactly k, k/4, k/32 and k/160.  Below
    that, every size is floored at 3 (two alphas plus one beta) and groups
    are only discarded when they fall below two members.
    """
    q_beta = max(3, math.ceil(k / 160))
    if k >= EXACT_QUOTA_K:
        return Quotas(k, k // 4, k // 32, q_beta, 0, True)
    return Quotas(max(k, 3), max(3, k // 4), max(3, k // 32), q_beta, 2, False)


class TieBreak:
    """Resolves every arbitrary choice; smallest id unless seeded-random."""

    def __init__(self, mode: str = "smallest-id", seed: int = 0) -> None:
        self.mode = mode
        self.rng = random.Random(seed)

    @property
    def randomized(self) -> bool:
        return self.mode == "seeded-random"

    def order(self, items: Iterable[T]) -> list[T]:
        out = sorted(items)
        if self.randomized:
            self.rng.shuffle(out)
        return out

    def pick(self, items: Sequence[T]) -> T:
        if not items:
            raise ValueError("nothing to pick from")
        return self.rng.choice(sorted(items)) if self.randomized else min(items)


class Context:
    """Per-run state shared by all phases."""

    def __init__(self, cfg: AdversaryConfig, system: System | None = None) -> None:
        self.cfg = cfg
        self.system = system or get_algorithm(cfg.algorithm).build(cfg.n, cfg.model, cfg.crash_clears_cache)
        self.executor = Executor(self.system)
        self.choose = TieBreak(cfg.tie_break, cfg.seed)
        self.quotas = quotas_for(cfg.k)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def k(self) -> int:
        return self.cfg.k

    @property
    def model(self) -> MemoryModel:
        return self.system.model


# Exact comparisons against log2(n) without floating point:
# a ≤ c·log2(n)  ⟺  2^a ≤ n^c  for non-negative integers a, c.


def le_c_log2(a: int, c: int, n: int) -> bool:
    return 2**a <= n**c


def ge_frac_log2(a: int, b: int, c: int, n: int) -> bool:
    """a ≥ b / (c·log2 n), i.e. n^(a·c) ≥ 2^b. Requires c·log2(n) > 0."""
    return n ** (a * c) >= 2**b


def within_log2(x: int, n: int) -> bool:
    """x ≤ log2(n)."""
    return 2**x <= n


def log2(n: int) -> float:
    return math.log2(n) if n > 0 else 0.0
