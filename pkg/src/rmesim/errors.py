"""Exception hierarchy. Every error carries a stable machine-readable ``code``."""

from __future__ import annotations

from typing import Any


class RmeError(Exception):
    code = "RME_ERROR"

    def __init__(self, message: str = "", *, witness: Any = None, **context: Any) -> None:
        super().__init__(message or self.code)
        self.message = message or self.code
        self.witness = witness
        self.context = dict(context)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": self.code, "message": self.message}
        for key, value in sorted(self.context.items()):
            if isinstance(value, (str, int, float, bool, list, dict)) or value is None:
                out[key] = value
        return out


class ConfigError(RmeError):
    """Raised by ``initial_config`` for malformed register declarations."""

    def __init__(self, code: str, message: str, **context: Any) -> None:
        super().__init__(message, **context)
        self.code = code


class SimulationError(RmeError):
    """A step could not be executed. ``index`` is set by ``execute``."""

    code = "SIMULATION_ERROR"
    index: int | None = None
    trace: tuple = ()


class StepOfFinished(SimulationError):
    code = "STEP_OF_FINISHED"


class ProgramFault(SimulationError):
    code = "PROGRAM_FAULT"


class UnknownProcess(SimulationError):
    code = "UNKNOWN_PROCESS"


class MutualExclusionViolation(SimulationError):
    code = "MUTUAL_EXCLUSION_VIOLATION"


class NoUniqueSmax(RmeError):
    code = "NO_UNIQUE_SMAX"


class EntryExecutionError(RmeError):
    """A schedule stored in an array cannot be executed."""

    code = "ENTRY_NOT_EXECUTABLE"


class SetupBudgetExceeded(RmeError):
    code = "SETUP_BUDGET_EXCEEDED"


class CompletionStall(RmeError):
    code = "COMPLETION_STALL"


class LemmaViolation(RmeError):
    code = "LEMMA_VIOLATION"


class SetupLemmaViolation(LemmaViolation):
    code = "SETUP_LEMMA_VIOLATION"


class LowLemmaViolation(LemmaViolation):
    code = "LOW_LEMMA_VIOLATION"


class HighLemmaViolation(LemmaViolation):
    code = "HIGH_LEMMA_VIOLATION"


class HighDegenerate(RmeError):
    code = "HIGH_DEGENERATE"


class StateSpaceOverflow(RmeError):
    code = "STATE_SPACE_OVERFLOW"
