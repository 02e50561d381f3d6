from causalmesh.services.checker.report import (
    CheckReport,
    anomaly_rate,
    check_run,
    check_trace,
    write_report,
)
from causalmesh.services.checker.sessions import (
    check_atomic_visibility,
    check_cut_coverage,
    check_repeatable_reads,
    check_sessions,
    check_sessions_exhaustive,
    exhaustive_agrees,
    minimize,
    revalidate,
)
from causalmesh.services.checker.state import (
    check_convergence,
    check_diagnostics,
    check_requests,
    check_snapshots,
    check_state,
    convergence_point,
)
from causalmesh.services.checker.violations import (
    PvcTracker,
    Violation,
    ViolationKind,
    pvc_timeline,
)

__all__ = [
    "CheckReport",
    "PvcTracker",
    "Violation",
    "ViolationKind",
    "anomaly_rate",
    "check_atomic_visibility",
    "check_convergence",
    "check_cut_coverage",
    "check_diagnostics",
    "check_repeatable_reads",
    "check_requests",
    "check_run",
    "check_sessions",
    "check_sessions_exhaustive",
    "check_snapshots",
    "check_state",
    "check_trace",
    "convergence_point",
    "exhaustive_agrees",
    "minimize",
    "pvc_timeline",
    "revalidate",
    "write_report",
]
