"""
Trace events, cache snapshots and run results.

A trace is an append-only list of events in execution order. It is written
as newline-delimited canonical JSON; fields that do not apply to an event
kind are omitted.
"""

import json
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError

from causalmesh.errors import TraceFormatError
from causalmesh.services.core.clocks import VectorClock
from causalmesh.services.core.versions import Deps, Key, Version, VersionedValue, WireBytes


class EventKind(str, Enum):
    WORKFLOW_START = "workflow_start"
    WORKFLOW_END = "workflow_end"
    FUNCTION_START = "function_start"
    CLIENT_READ_REQ = "client_read_req"
    CLIENT_READ_REPLY = "client_read_reply"
    CLIENT_WRITE_REQ = "client_write_req"
    CLIENT_WRITE_REPLY = "client_write_reply"
    READ_TXN_REQ = "read_txn_req"
    READ_TXN_REPLY = "read_txn_reply"
    MISS_FETCH = "miss_fetch"
    TCC_READ_REQ = "tcc_read_req"
    TCC_READ_REPLY = "tcc_read_reply"
    BATCH_COMMIT = "batch_commit"
    ABORT = "abort"
    PROPAGATE_SEND = "propagate_send"
    PROPAGATE_DELIVER = "propagate_deliver"
    TAIL_INTEGRATE = "tail_integrate"
    INTEGRATE_HINT = "integrate_hint"
    STORE_FLUSH = "store_flush"
    DIAGNOSTIC = "diagnostic"


# Events that stand for a value observed by a session.
READ_KINDS = frozenset({EventKind.CLIENT_READ_REPLY, EventKind.READ_TXN_REPLY, EventKind.TCC_READ_REPLY})


class TraceItem(BaseModel):
    key: Key
    vc: Optional[VectorClock] = None
    value: Optional[WireBytes] = None
    deps: Optional[Deps] = None
    fetched: bool = False


class TraceEvent(BaseModel):
    seq: int = Field(description="Position in the trace")
    time: int = Field(description="Logical time")
    kind: EventKind
    server: Optional[int] = None
    session: Optional[str] = None
    workflow: Optional[str] = None
    key: Optional[Key] = None
    value: Optional[WireBytes] = None
    vc: Optional[VectorClock] = Field(default=None, description="Clock assigned or returned by a server")
    observed_vc: Optional[VectorClock] = Field(
        default=None, description="Clock of the value handed to the application"
    )
    deps: Optional[Deps] = None
    items: Optional[List[TraceItem]] = None
    parents: Optional[List[str]] = Field(default=None, description="Sessions joined into this one")
    origin: Optional[int] = None
    hop: Optional[int] = None
    found: Optional[bool] = None
    detail: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(
            self.model_dump(mode="json", exclude_none=True), sort_keys=True, separators=(",", ":")
        )


# ============================================================================
# SNAPSHOTS
# ============================================================================

class ServerSnapshot(BaseModel):
    server: int
    gvc: VectorClock
    ccache: Dict[Key, VersionedValue] = Field(default_factory=dict)
    recorded: Dict[Key, Deps] = Field(default_factory=dict, description="Deps folded into each C-cache key")
    icache: Dict[Key, List[Version]] = Field(default_factory=dict)
    rings: Optional[Dict[Key, List[Version]]] = Field(default=None, description="TCC ring contents")


class SnapshotRecord(BaseModel):
    step: int
    time: int
    trace_len: int = Field(description="Events recorded before the snapshot was taken")
    reason: str = Field(default="periodic")
    mode: str = Field(default="causalmesh", description="causalmesh | tcc | eventual_baseline")
    servers: List[ServerSnapshot]
    store: Optional[Dict[Key, Version]] = None


class WorkflowOutcome(BaseModel):
    workflow: str
    status: str = Field(description="committed | failed")
    attempts: int = 1
    aborts: int = 0
    read_txn_overlap: bool = Field(
        default=False, description="A read transaction touched a key the session had written"
    )


class RunResult(BaseModel):
    trace: List[TraceEvent]
    snapshots: List[SnapshotRecord] = Field(default_factory=list)
    final: Optional[SnapshotRecord] = None
    workflows: List[WorkflowOutcome] = Field(default_factory=list)
    stats: Dict[str, int] = Field(default_factory=dict)
    fatal: Optional[str] = Field(default=None, description="Diagnostic that ended the run early")
    n: int = 1


# ============================================================================
# FILE I/O
# ============================================================================

def dump_trace(events: Iterable[TraceEvent], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for event in events:
            f.write(event.to_json())
            f.write("\n")


def parse_trace_lines(lines: Iterable[str]) -> List[TraceEvent]:
    events: List[TraceEvent] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            events.append(TraceEvent.model_validate_json(line))
        except ValidationError as e:
            raise TraceFormatError(f"line {lineno}: {e.error_count()} invalid field(s)") from e
    return events


def load_trace(path: Union[str, Path]) -> List[TraceEvent]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_trace_lines(f)
    except (OSError, UnicodeDecodeError) as e:
        raise TraceFormatError(f"cannot read trace {path}: {e}") from e


def load_snapshots(path: Union[str, Path]) -> List[SnapshotRecord]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return [SnapshotRecord.model_validate(s) for s in raw]
    except (OSError, ValueError, TypeError) as e:
        raise TraceFormatError(f"cannot read snapshots {path}: {e}") from e
