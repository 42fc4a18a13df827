"""History-aware adaptive regularization methods for composite optimization."""

__version__ = "0.1.0"

from .accel import AuditReport, audit_estimating_sequence, repeat_bound, run_har_a
from .oracles import BoxIndicator, L1Term, ProblemInstance, ZeroTerm, stationarity
from .solvers import (
    HistoryPolicy,
    RunResult,
    RunStatus,
    SolverConfig,
    run_arc_baseline,
    run_har,
    run_lsar_baseline,
    unsuccessful_bound,
)

__all__ = [
    "AuditReport",
    "BoxIndicator",
    "HistoryPolicy",
    "L1Term",
    "ProblemInstance",
    "RunResult",
    "RunStatus",
    "SolverConfig",
    "ZeroTerm",
    "audit_estimating_sequence",
    "repeat_bound",
    "run_arc_baseline",
    "run_har",
    "run_har_a",
    "run_lsar_baseline",
    "stationarity",
    "unsuccessful_bound",
]
