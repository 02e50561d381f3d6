"""Violation records and the checker-owned PVC (proof vector clock)."""

from enum import Enum
from typing import Iterable, List, Optional, Sequence

from pydantic import BaseModel, Field

from causalmesh.schemas.trace import EventKind, TraceEvent
from causalmesh.services.core.clocks import VectorClock, vc_merge, zero_clock
from causalmesh.services.core.versions import Key


class ViolationKind(str, Enum):
    READ_YOUR_WRITES = "read_your_writes"
    MONOTONIC_READS = "monotonic_reads"
    WRITES_FOLLOW_READS = "writes_follow_reads"
    MONOTONIC_WRITES = "monotonic_writes"
    CUT_COVERAGE = "cut_coverage"
    CCACHE_NOT_CUT = "ccache_not_cut"
    PVC_BOUND = "pvc_bound"
    NOT_GLOBALLY_AVAILABLE = "not_globally_available"
    ATOMIC_VISIBILITY = "atomic_visibility"
    REPEATABLE_READ = "repeatable_read"


SESSION_KINDS = frozenset(
    {
        ViolationKind.READ_YOUR_WRITES,
        ViolationKind.MONOTONIC_READS,
        ViolationKind.WRITES_FOLLOW_READS,
        ViolationKind.MONOTONIC_WRITES,
    }
)


class Violation(BaseModel):
    kind: ViolationKind
    detail: str = ""
    session: Optional[str] = None
    workflow: Optional[str] = None
    server: Optional[int] = None
    key: Optional[Key] = None
    read_seq: Optional[int] = Field(default=None, description="Trace position of the offending read")
    step: Optional[int] = Field(default=None, description="Simulator step of the offending snapshot")
    witness: List[TraceEvent] = Field(default_factory=list)

    def label(self) -> str:
        where = self.session or (f"S{self.server}" if self.server is not None else "-")
        return f"{self.kind.value} at {where} on {self.key or '-'}: {self.detail}"


def trace_width(trace: Iterable[TraceEvent]) -> int:
    """Clock width used in the trace, 0 when no event carries a clock."""
    for event in trace:
        for vc in (event.vc, event.observed_vc):
            if vc is not None:
                return len(vc)
        for item in event.items or ():
            if item.vc is not None:
                return len(item.vc)
        for vc in (event.deps or {}).values():
            return len(vc)
    return 0


class PvcTracker:
    """Merge of the clocks of every version that has reached its tail."""

    def __init__(self, n: int):
        self.pvc: VectorClock = zero_clock(n) if n else ()

    def observe(self, event: TraceEvent) -> None:
        if event.kind == EventKind.TAIL_INTEGRATE and event.vc is not None:
            self.pvc = vc_merge(self.pvc, event.vc)

    @classmethod
    def from_trace(cls, trace: Sequence[TraceEvent], upto: Optional[int] = None) -> "PvcTracker":
        tracker = cls(trace_width(trace))
        for event in trace[:upto]:
            tracker.observe(event)
        return tracker


def pvc_timeline(trace: Sequence[TraceEvent]) -> List[VectorClock]:
    """PVC in force just before each event of the trace."""
    tracker = PvcTracker(trace_width(trace))
    timeline = []
    for event in trace:
        timeline.append(tracker.pvc)
        tracker.observe(event)
    return timeline
