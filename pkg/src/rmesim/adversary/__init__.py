"""Round-by-round adversary that builds i-compliant schedule arrays."""

from .config import AdversaryConfig, Context, Quotas, TieBreak, quotas_for
from .decision import Decision, decision_phase
from .high import GroupTable, beta_schedule, compute_D_and_betas, discover_sigma_F, high_filter_chain, high_phase, high_prepare, select_alphas
from .low import ConflictGraph, build_conflict_graph, independent_set, low_phase
from .run import Bound, FinalWitness, RoundReport, RunResult, base_row, play_round, run, should_terminate
from .setup import compute_sigma_p, cs_eviction, setup_phase

__all__ = [
    "AdversaryConfig",
    "Bound",
    "ConflictGraph",
    "Context",
    "Decision",
    "FinalWitness",
    "GroupTable",
    "Quotas",
    "RoundReport",
    "RunResult",
    "TieBreak",
    "base_row",
    "beta_schedule",
    "build_conflict_graph",
    "compute_D_and_betas",
    "compute_sigma_p",
    "cs_eviction",
    "decision_phase",
    "discover_sigma_F",
    "high_filter_chain",
    "high_phase",
    "high_prepare",
    "independent_set",
    "low_phase",
    "play_round",
    "quotas_for",
    "run",
    "select_alphas",
    "setup_phase",
    "should_terminate",
]
