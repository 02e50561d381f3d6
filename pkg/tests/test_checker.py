import json

import pytest

from causalmesh.schemas.trace import EventKind, ServerSnapshot, SnapshotRecord, TraceEvent, TraceItem
from causalmesh.services.checker.report import anomaly_rate, check_trace, write_report
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
from causalmesh.services.checker.state import check_convergence, check_requests, check_state
from causalmesh.services.checker.violations import PvcTracker, ViolationKind
from causalmesh.services.core.versions import Version, VersionedValue


class TraceBuilder:
    def __init__(self):
        self.events = []

    def add(self, kind, **fields):
        seq = len(self.events)
        self.events.append(TraceEvent(seq=seq, time=seq, kind=kind, **fields))
        return self

    def write(self, session, key, vc, workflow=None):
        return self.add(EventKind.CLIENT_WRITE_REPLY, session=session, workflow=workflow, key=key, vc=vc)

    def read(self, session, key, vc, workflow=None):
        if vc is None:
            return self.add(EventKind.CLIENT_READ_REPLY, session=session, workflow=workflow, key=key, found=False)
        return self.add(
            EventKind.CLIENT_READ_REPLY, session=session, workflow=workflow, key=key,
            vc=vc, observed_vc=vc, found=True,
        )

    def tcc_read(self, session, key, vc, deps=None):
        return self.add(
            EventKind.TCC_READ_REPLY, session=session, key=key, vc=vc, observed_vc=vc, deps=deps or {},
            found=True,
        )


# ============================================================================
# Session guarantees
# ============================================================================

def test_read_your_writes_witness_is_two_events():
    trace = (
        TraceBuilder()
        .write("s", "y", (0, 1))
        .write("s", "x", (1, 0))
        .read("s", "y", (0, 1))
        .read("s", "x", (0, 2))
        .events
    )
    (v,) = check_sessions(trace)
    assert v.kind == ViolationKind.READ_YOUR_WRITES
    assert v.key == "x" and v.read_seq == 3
    assert [e.seq for e in v.witness] == [1, 3]
    assert revalidate(v)
    assert exhaustive_agrees(trace)


def test_monotonic_reads():
    trace = TraceBuilder().read("s", "x", (2, 0)).read("s", "x", (1, 0)).events
    (v,) = check_sessions(trace)
    assert v.kind == ViolationKind.MONOTONIC_READS
    assert exhaustive_agrees(trace)


def test_writes_follow_reads_across_sessions():
    trace = (
        TraceBuilder()
        .write("w", "x", (1, 0))
        .read("a", "x", (1, 0))
        .write("a", "y", (1, 1))
        .read("b", "y", (1, 1))
        .read("b", "x", None)
        .events
    )
    (v,) = check_sessions(trace)
    assert v.kind == ViolationKind.WRITES_FOLLOW_READS
    assert v.session == "b" and v.read_seq == 4
    assert check_sessions_exhaustive(trace) == {(4, "x")}


def test_monotonic_writes_across_sessions():
    trace = (
        TraceBuilder()
        .write("a", "x", (1, 0))
        .write("a", "y", (2, 0))
        .read("b", "y", (2, 0))
        .read("b", "x", (0, 1))
        .events
    )
    (v,) = check_sessions(trace)
    assert v.kind == ViolationKind.MONOTONIC_WRITES
    assert exhaustive_agrees(trace)


def test_parent_functions_pass_obligations_on():
    trace = (
        TraceBuilder()
        .write("f0", "x", (1, 0), workflow="wf")
        .add(EventKind.FUNCTION_START, session="f1", workflow="wf", parents=["f0"])
        .read("f1", "x", (0, 1), workflow="wf")
        .events
    )
    (v,) = check_sessions(trace)
    assert v.kind == ViolationKind.READ_YOUR_WRITES
    assert [e.seq for e in v.witness] == [0, 1, 2]
    assert exhaustive_agrees(trace)


def test_clean_trace():
    trace = (
        TraceBuilder()
        .write("a", "x", (1, 0))
        .read("a", "x", (1, 1))
        .read("b", "x", (1, 0))
        .read("b", "x", (1, 0))
        .events
    )
    assert check_sessions(trace) == []
    assert exhaustive_agrees(trace)


def test_exhaustive_checker_refuses_large_traces():
    builder = TraceBuilder()
    for i in range(13):
        builder.read("s", "x", (i, 0))
    with pytest.raises(ValueError):
        check_sessions_exhaustive(builder.events)


def test_minimize_keeps_pinned_event():
    events = TraceBuilder().read("s", "a", (1,)).read("s", "b", (1,)).read("s", "c", (1,)).events
    kept = minimize(events, lambda sub: any(e.key == "b" for e in sub), keep=2)
    assert [e.key for e in kept] == ["b", "c"]


# ============================================================================
# Cut coverage, atomic visibility, repeatable reads
# ============================================================================

def test_cut_coverage_flags_regressing_txn_read():
    trace = (
        TraceBuilder()
        .read("s", "x", (2, 0))
        .add(EventKind.READ_TXN_REPLY, session="s", items=[TraceItem(key="x", vc=(1, 0))])
        .events
    )
    (v,) = check_cut_coverage(trace)
    assert v.kind == ViolationKind.CUT_COVERAGE
    assert [e.seq for e in v.witness] == [0, 1]
    assert revalidate(v)


def _batch(builder):
    return builder.add(
        EventKind.BATCH_COMMIT,
        session="w",
        items=[TraceItem(key="a", vc=(1, 0)), TraceItem(key="b", vc=(2, 0))],
    )


def test_atomic_visibility_needs_earlier_members():
    trace = _batch(TraceBuilder()).tcc_read("t", "b", (2, 0)).events
    (v,) = check_atomic_visibility(trace)
    assert v.kind == ViolationKind.ATOMIC_VISIBILITY
    assert v.key == "a"


def test_atomic_visibility_satisfied_by_deps_and_read_set():
    by_deps = _batch(TraceBuilder()).tcc_read("t", "b", (2, 0), deps={"a": (1, 0)}).events
    assert check_atomic_visibility(by_deps) == []
    by_readset = _batch(TraceBuilder()).tcc_read("t", "a", (1, 0)).tcc_read("t", "b", (2, 0)).events
    assert check_atomic_visibility(by_readset) == []


def test_atomic_visibility_flags_stale_member_in_read_set():
    trace = (
        _batch(TraceBuilder().tcc_read("t", "a", (0, 1)))
        .tcc_read("t", "b", (2, 0), deps={"a": (1, 0)})
        .events
    )
    kinds = [v.kind for v in check_atomic_visibility(trace)]
    assert kinds == [ViolationKind.ATOMIC_VISIBILITY]


def test_repeatable_reads():
    trace = TraceBuilder().tcc_read("t", "x", (1, 0)).tcc_read("t", "x", (2, 0)).events
    (v,) = check_repeatable_reads(trace)
    assert v.kind == ViolationKind.REPEATABLE_READ
    same = TraceBuilder().tcc_read("t", "x", (1, 0)).tcc_read("t", "x", (1, 0)).events
    assert check_repeatable_reads(same) == []


# ============================================================================
# State and requests
# ============================================================================

def _record(servers, store=None, mode="causalmesh", reason="final"):
    return SnapshotRecord(step=0, time=0, trace_len=0, servers=servers, store=store, mode=mode, reason=reason)


def test_state_violations():
    shows = ServerSnapshot(
        server=0,
        gvc=(1, 0),
        ccache={"x": VersionedValue(value=b"x", vc=(1, 0))},
        recorded={"x": {"y": (1, 0)}},
    )
    empty = ServerSnapshot(server=1, gvc=(0, 0))
    kinds = {v.kind for v in check_state(_record([shows, empty]), (0, 0))}
    assert kinds == {
        ViolationKind.PVC_BOUND,
        ViolationKind.NOT_GLOBALLY_AVAILABLE,
        ViolationKind.CCACHE_NOT_CUT,
    }
    assert check_state(_record([shows, empty], mode="eventual_baseline"), (0, 0)) == []


def test_icache_copy_counts_as_available():
    x = Version(key="x", value=b"x", vc=(1, 0))
    shows = ServerSnapshot(server=0, gvc=(1, 0), ccache={"x": x.as_value()})
    pending = ServerSnapshot(server=1, gvc=(0, 0), icache={"x": [x]})
    assert check_state(_record([shows, pending]), (1, 0)) == []


def test_request_deps_bounded_by_pvc():
    early = (
        TraceBuilder()
        .add(EventKind.CLIENT_READ_REQ, session="s", key="x", deps={"x": (1, 0)})
        .add(EventKind.TAIL_INTEGRATE, server=1, key="x", vc=(1, 0))
        .events
    )
    (v,) = check_requests(early)
    assert v.kind == ViolationKind.PVC_BOUND
    late = (
        TraceBuilder()
        .add(EventKind.TAIL_INTEGRATE, server=1, key="x", vc=(1, 0))
        .add(EventKind.CLIENT_READ_REQ, session="s", key="x", deps={"x": (1, 0)})
        .events
    )
    assert check_requests(late) == []
    assert PvcTracker.from_trace(late).pvc == (1, 0)


def test_client_side_trace_has_no_pvc_to_bound():
    trace = (
        TraceBuilder()
        .write("c1", "y", (2, 0, 0))
        .add(EventKind.CLIENT_READ_REQ, session="c2", key="x", deps={"y": (2, 0, 0)})
        .read("c2", "x", (1, 0, 0))
        .events
    )
    assert check_requests(trace) == []
    assert check_trace(trace).clean


def test_convergence():
    x = Version(key="x", value=b"x", vc=(1, 0))
    servers = [
        ServerSnapshot(server=0, gvc=(1, 0), ccache={"x": x.as_value()}),
        ServerSnapshot(server=1, gvc=(1, 0), icache={"x": [x]}),
    ]
    assert check_convergence(_record(servers, store={"x": x}))
    stale = servers[:1] + [ServerSnapshot(server=1, gvc=(0, 0))]
    assert not check_convergence(_record(stale, store={"x": x}))


# ============================================================================
# Report
# ============================================================================

def test_report_counts_anomalous_workflows(tmp_path):
    trace = (
        TraceBuilder()
        .add(EventKind.WORKFLOW_START, workflow="wf0")
        .add(EventKind.WORKFLOW_START, workflow="wf1")
        .write("s", "x", (1, 0), workflow="wf0")
        .read("s", "x", (0, 1), workflow="wf0")
        .events
    )
    report = check_trace(trace)
    assert not report.clean
    assert report.workflows == 2 and report.anomalous_workflows == 1
    assert report.anomaly_rate == anomaly_rate(trace) == 0.5
    assert report.counts["read_your_writes"] == 1
    assert report.counts["cut_coverage"] == 1
    assert report.converged is None

    path = tmp_path / "report.json"
    write_report(report, path)
    data = json.loads(path.read_text())
    assert data["clean"] is False
    assert data["violations"][0]["kind"] == "read_your_writes"


def test_empty_trace_is_clean():
    report = check_trace([])
    assert report.clean and report.anomaly_rate == 0.0
