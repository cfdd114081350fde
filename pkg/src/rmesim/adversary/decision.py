"""Group the active processes by the register they are poised on."""

from __future__ import annotations

from dataclasses import dataclass

from ..compliance import ScheduleArray
from .common import PoisedView, active_of, poised_view
from .config import Context


@dataclass(frozen=True)
class Decision:
    buckets: dict[str, list[int]]  # register -> poised processes, declaration order
    high: list[int]
    low: list[int]
    view: PoisedView

    @property
    def branch(self) -> str:
        return "Low" if len(self.low) >= len(self.high) else "High"

    def to_json(self) -> dict:
        return {
            "branch": self.branch,
            "H": self.high,
            "L": self.low,
            "buckets": {r: ps for r, ps in self.buckets.items()},
        }


def decision_phase(ctx: Context, array: ScheduleArray) -> Decision:
    """Split the active processes into high- and low-contention sets.

    A register is contended when at least ``k`` processes are poised on it.
    """
    active = active_of(array)
    view = poised_view(ctx.executor.run(array[array.smax]), active)
    buckets = view.group_by_register(ctx.system.names)
    high = sorted(p for ps in buckets.values() if len(ps) >= ctx.k for p in ps)
    low = sorted(set(active) - set(high))
    return Decision(buckets, high, low, view)
