"""Run every check over a trace and its snapshots; build the JSON report."""

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, Field

from causalmesh.schemas.trace import EventKind, RunResult, SnapshotRecord, TraceEvent
from causalmesh.services.checker.sessions import (
    check_atomic_visibility,
    check_cut_coverage,
    check_repeatable_reads,
    check_sessions,
    revalidate,
)
from causalmesh.services.checker.state import (
    check_convergence,
    check_diagnostics,
    check_requests,
    check_snapshots,
    convergence_failures,
)
from causalmesh.services.checker.violations import SESSION_KINDS, Violation

logger = logging.getLogger(__name__)


class CheckReport(BaseModel):
    clean: bool
    events: int
    workflows: int
    anomalous_workflows: int
    anomaly_rate: float
    counts: Dict[str, int] = Field(default_factory=dict)
    converged: Optional[bool] = Field(default=None, description="None when no final snapshot was given")
    unconfirmed: int = Field(default=0, description="Violations whose witness did not re-check")
    violations: List[Violation] = Field(default_factory=list)

    def summary(self) -> str:
        lines = [
            f"{'CLEAN' if self.clean else 'VIOLATIONS'}: {self.events} events, "
            f"{self.workflows} workflows, anomaly rate {self.anomaly_rate:.4f}"
        ]
        for kind, count in sorted(self.counts.items()):
            lines.append(f"  {kind}: {count}")
        if self.converged is False:
            lines.append("  final state did not converge")
        for v in self.violations[:5]:
            lines.append(f"  - {v.label()}")
        return "\n".join(lines)


def workflow_ids(trace: Sequence[TraceEvent]) -> List[str]:
    starts = [e.workflow for e in trace if e.kind == EventKind.WORKFLOW_START and e.workflow]
    if starts:
        return sorted(set(starts))
    return sorted({e.workflow for e in trace if e.workflow and e.session})


def anomaly_rate(trace: Sequence[TraceEvent], violations: Optional[Sequence[Violation]] = None) -> float:
    """Share of workflows with at least one session-guarantee violation."""
    ids = workflow_ids(trace)
    if not ids:
        return 0.0
    if violations is None:
        violations = check_sessions(trace, minimize_witness=False)
    bad = {v.workflow for v in violations if v.kind in SESSION_KINDS and v.workflow}
    return len(bad & set(ids)) / len(ids)


def check_trace(
    trace: Sequence[TraceEvent],
    snapshots: Sequence[SnapshotRecord] = (),
    final: Optional[SnapshotRecord] = None,
    minimize_witness: bool = True,
) -> CheckReport:
    violations: List[Violation] = []
    violations += check_sessions(trace, minimize_witness=minimize_witness)
    violations += check_cut_coverage(trace)
    violations += check_requests(trace)
    violations += check_atomic_visibility(trace)
    violations += check_repeatable_reads(trace)
    violations += check_diagnostics(trace)
    violations += check_snapshots(trace, [*snapshots, *([final] if final is not None else [])])

    unconfirmed = sum(1 for v in violations if not revalidate(v))
    if unconfirmed:
        logger.warning("%d violation witness(es) did not re-check", unconfirmed)

    converged = None
    drained = not any(e.kind == EventKind.DIAGNOSTIC for e in trace)
    if final is not None and final.store is not None and drained:
        converged = check_convergence(final)

    ids = workflow_ids(trace)
    bad = {v.workflow for v in violations if v.kind in SESSION_KINDS and v.workflow} & set(ids)
    counts = Counter(v.kind.value for v in violations)
    return CheckReport(
        clean=not violations and converged is not False,
        events=len(trace),
        workflows=len(ids),
        anomalous_workflows=len(bad),
        anomaly_rate=len(bad) / len(ids) if ids else 0.0,
        counts=dict(counts),
        converged=converged,
        unconfirmed=unconfirmed,
        violations=violations,
    )


def check_run(result: RunResult, minimize_witness: bool = True) -> CheckReport:
    return check_trace(result.trace, result.snapshots, result.final, minimize_witness)


def write_report(report: CheckReport, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(report.model_dump(mode="json", exclude_none=True), indent=2, sort_keys=True),
        encoding="utf-8",
    )


__all__ = [
    "CheckReport",
    "anomaly_rate",
    "check_run",
    "check_trace",
    "convergence_failures",
    "workflow_ids",
    "write_report",
]
