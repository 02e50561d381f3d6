"""
Snapshot and request checks against the PVC.

These never touch a live server: they work on ServerSnapshot records and the
trace prefix recorded before each snapshot.
"""

import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from causalmesh.schemas.trace import EventKind, ServerSnapshot, SnapshotRecord, TraceEvent
from causalmesh.services.cache.cut import ccache_as_versions, is_strict_causal_cut
from causalmesh.services.checker.violations import PvcTracker, Violation, ViolationKind, trace_width
from causalmesh.services.core.clocks import VectorClock, vc_leq, vc_merge
from causalmesh.services.core.versions import Key, VersionedValue, resolve_all

logger = logging.getLogger(__name__)

REQUEST_KINDS = frozenset({EventKind.CLIENT_READ_REQ, EventKind.READ_TXN_REQ, EventKind.TCC_READ_REQ})
BASELINE_MODE = "eventual_baseline"


def _server_view(server: ServerSnapshot, key: Key) -> Optional[VectorClock]:
    """What a server holds for key across both caches, as one clock."""
    clocks = [v.vc for v in server.icache.get(key, ())]
    entry = server.ccache.get(key)
    if entry is not None:
        clocks.append(entry.vc)
    if not clocks:
        return None
    merged = clocks[0]
    for vc in clocks[1:]:
        merged = vc_merge(merged, vc)
    return merged


def check_state(record: SnapshotRecord, pvc: VectorClock) -> List[Violation]:
    """
    For each server: every visible clock is bounded by the PVC, every
    visible version is available on every server, and the C-cache with its
    recorded deps is a strict causal cut.
    """
    if record.mode == BASELINE_MODE:
        return []
    violations: List[Violation] = []

    def flag(kind: ViolationKind, server: int, key: Optional[Key], detail: str) -> None:
        violations.append(
            Violation(kind=kind, server=server, key=key, step=record.step, detail=detail)
        )

    for server in record.servers:
        visible: List[Tuple[Key, VectorClock]] = [(k, e.vc) for k, e in server.ccache.items()]
        for key, ring in (server.rings or {}).items():
            visible.extend((key, v.vc) for v in ring)
        for key, vc in visible:
            if len(vc) == len(pvc) and not vc_leq(vc, pvc):
                flag(ViolationKind.PVC_BOUND, server.server, key,
                     f"S{server.server} shows {key}@{list(vc)} above PVC {list(pvc)}")

        for key, entry in server.ccache.items():
            for other in record.servers:
                held = _server_view(other, key)
                if held is None or not vc_leq(entry.vc, held):
                    have = "nothing" if held is None else list(held)
                    flag(ViolationKind.NOT_GLOBALLY_AVAILABLE, server.server, key,
                         f"S{server.server} shows {key}@{list(entry.vc)}, S{other.server} holds {have}")
                    break

        if not is_strict_causal_cut(ccache_as_versions(server.ccache, server.recorded)):
            flag(ViolationKind.CCACHE_NOT_CUT, server.server, None,
                 f"S{server.server} C-cache is not a causal cut")
    return violations


def check_snapshots(trace: Sequence[TraceEvent], snapshots: Iterable[SnapshotRecord]) -> List[Violation]:
    """check_state for each snapshot against the PVC of the trace prefix it was taken after."""
    records = sorted(snapshots, key=lambda r: r.trace_len)
    tracker = PvcTracker(trace_width(trace))
    position = 0
    violations: List[Violation] = []
    for record in records:
        while position < min(record.trace_len, len(trace)):
            tracker.observe(trace[position])
            position += 1
        violations.extend(check_state(record, tracker.pvc))
    return violations


def check_requests(
    trace: Sequence[TraceEvent], timeline: Optional[Sequence[VectorClock]] = None
) -> List[Violation]:
    """
    Every read request's deps are bounded by the PVC at the moment it was sent.

    The PVC is rebuilt from the trace's tail integrations. A client-side trace
    from a TCP cluster records none, so there is nothing to bound against.
    """
    if timeline is None and not any(e.kind == EventKind.TAIL_INTEGRATE for e in trace):
        logger.info("no tail integrations in the trace; skipping the request PVC bound")
        return []
    tracker = PvcTracker(trace_width(trace))
    violations: List[Violation] = []
    for i, event in enumerate(trace):
        pvc = timeline[i] if timeline is not None else tracker.pvc
        if event.kind in REQUEST_KINDS and event.deps:
            for key, vc in sorted(event.deps.items()):
                if len(vc) == len(pvc) and not vc_leq(vc, pvc):
                    violations.append(
                        Violation(
                            kind=ViolationKind.PVC_BOUND,
                            session=event.session,
                            workflow=event.workflow,
                            server=event.server,
                            key=key,
                            read_seq=event.seq,
                            detail=f"request carries {key}@{list(vc)} above PVC {list(pvc)}",
                            witness=[event],
                        )
                    )
        tracker.observe(event)
    return violations


def check_diagnostics(trace: Sequence[TraceEvent]) -> List[Violation]:
    """A run stopped by an unsatisfiable dependency reports it as unavailable data."""
    return [
        Violation(
            kind=ViolationKind.NOT_GLOBALLY_AVAILABLE,
            server=e.server,
            key=e.key,
            read_seq=e.seq,
            detail=e.detail or "diagnostic",
            witness=[e],
        )
        for e in trace
        if e.kind == EventKind.DIAGNOSTIC and e.key is not None
    ]


def convergence_point(final: SnapshotRecord) -> Dict[Key, VersionedValue]:
    """Per key, the resolve fold over every cached copy and the store."""
    pools: Dict[Key, List[VersionedValue]] = {}
    for server in final.servers:
        for key, entry in server.ccache.items():
            pools.setdefault(key, []).append(entry)
        for key, versions in server.icache.items():
            pools.setdefault(key, []).extend(v.as_value() for v in versions)
    for key, version in (final.store or {}).items():
        pools.setdefault(key, []).append(version.as_value())
    return {key: resolve_all(values) for key, values in pools.items()}


def convergence_failures(final: SnapshotRecord) -> List[str]:
    failures: List[str] = []
    target = convergence_point(final)
    for key in sorted(target):
        want = target[key]
        for server in final.servers:
            pool = [v.as_value() for v in server.icache.get(key, ())]
            if key in server.ccache:
                pool.append(server.ccache[key])
            view = resolve_all(pool)
            if view is None or (view.value, view.vc) != (want.value, want.vc):
                got = "nothing" if view is None else list(view.vc)
                failures.append(f"S{server.server} resolves {key} to {got}, expected {list(want.vc)}")
        if final.store is not None:
            stored = final.store.get(key)
            if stored is None or (stored.value, stored.vc) != (want.value, want.vc):
                failures.append(f"store holds {key} at {list(stored.vc) if stored else 'nothing'}")
    return failures


def check_convergence(final: SnapshotRecord) -> bool:
    failures = convergence_failures(final)
    for line in failures[:10]:
        logger.warning("not converged: %s", line)
    return not failures
