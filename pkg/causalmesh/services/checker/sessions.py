"""
Session guarantees over a trace.

The incremental checker walks the trace once. Each session carries a
frontier: for every key, the clocks any later read of that key must dominate,
each tagged with the guarantee it stems from. Own writes add read-your-writes
obligations and own reads add monotonic-reads ones. A read that observes a
write imports the frontier the writer had when it wrote, relabelled: the
writer's own writes become monotonic-writes obligations and the writer's
reads become writes-follow-reads ones. A function started from earlier
functions inherits their frontiers.

"Observes w" means the read returned a clock >= w's clock for w's key.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from causalmesh.schemas.trace import EventKind, TraceEvent
from causalmesh.services.checker.violations import SESSION_KINDS, Violation, ViolationKind
from causalmesh.services.core.clocks import VectorClock, vc_leq, vc_merge
from causalmesh.services.core.versions import Key

logger = logging.getLogger(__name__)

RYW = ViolationKind.READ_YOUR_WRITES
MR = ViolationKind.MONOTONIC_READS
MW = ViolationKind.MONOTONIC_WRITES
WFR = ViolationKind.WRITES_FOLLOW_READS

IMPORTED_AS = {RYW: MW, MR: WFR, MW: MW, WFR: WFR}
PRIORITY = {RYW: 0, MR: 1, MW: 2, WFR: 3}

# Exhaustive checking is only attempted on traces this small.
EXHAUSTIVE_LIMIT = 12


@dataclass(frozen=True)
class Obligation:
    vc: VectorClock
    kind: ViolationKind
    path: Tuple[int, ...]


Frontier = Dict[Key, List[Obligation]]


def _add(frontier: Frontier, key: Key, ob: Obligation) -> None:
    current = frontier.setdefault(key, [])
    if any(vc_leq(ob.vc, o.vc) for o in current):
        return
    current[:] = [o for o in current if not vc_leq(o.vc, ob.vc)]
    current.append(ob)


def _copy(frontier: Frontier) -> Frontier:
    return {k: list(obs) for k, obs in frontier.items()}


@dataclass
class SessionView:
    frontier: Frontier = field(default_factory=dict)
    imported: Set[int] = field(default_factory=set)


@dataclass
class WriteRecord:
    seq: int
    key: Key
    vc: VectorClock
    frontier: Frontier


# ============================================================================
# TRACE ACCESSORS
# ============================================================================

def reads_of(event: TraceEvent) -> List[Tuple[Key, Optional[VectorClock]]]:
    """(key, observed clock or None when not found) for every value a session observed."""
    if event.kind in (EventKind.CLIENT_READ_REPLY, EventKind.TCC_READ_REPLY):
        return [(event.key, event.observed_vc if event.found else None)]
    if event.kind == EventKind.READ_TXN_REPLY:
        return [(item.key, item.vc) for item in event.items or ()]
    return []


def writes_of(event: TraceEvent) -> List[Tuple[Key, VectorClock, bool]]:
    """(key, clock, own) for every version created. Store fills are not the session's own."""
    if event.kind == EventKind.CLIENT_WRITE_REPLY and event.vc is not None:
        return [(event.key, event.vc, True)]
    if event.kind == EventKind.BATCH_COMMIT:
        return [(item.key, item.vc, True) for item in event.items or () if item.vc is not None]
    if event.kind == EventKind.MISS_FETCH and event.found and event.detail == "store":
        return [(event.key, event.vc, False)]
    return []


def session_parents(trace: Iterable[TraceEvent]) -> Dict[str, List[str]]:
    parents: Dict[str, List[str]] = {}
    for event in trace:
        if event.kind == EventKind.FUNCTION_START and event.session and event.parents:
            parents.setdefault(event.session, []).extend(event.parents)
    return parents


def _lineage(sessions: Iterable[str], parents: Dict[str, List[str]]) -> Set[str]:
    seen: Set[str] = set()
    stack = [s for s in sessions if s]
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        stack.extend(parents.get(s, ()))
    return seen


# ============================================================================
# INCREMENTAL CHECKER
# ============================================================================

def _session_scan(trace: Sequence[TraceEvent]) -> List[Tuple[ViolationKind, TraceEvent, Key, Obligation]]:
    sessions: Dict[str, SessionView] = {}
    writes: Dict[Key, List[WriteRecord]] = {}
    found: List[Tuple[ViolationKind, TraceEvent, Key, Obligation]] = []

    def view(sid: str) -> SessionView:
        if sid not in sessions:
            sessions[sid] = SessionView()
        return sessions[sid]

    for event in trace:
        sid = event.session
        if sid is None:
            continue
        if event.kind == EventKind.FUNCTION_START and event.parents:
            state = view(sid)
            for p in event.parents:
                parent = sessions.get(p)
                if parent is None:
                    continue
                for key, obs in parent.frontier.items():
                    for ob in obs:
                        _add(state.frontier, key, ob)
                state.imported |= parent.imported
            continue

        for key, observed in reads_of(event):
            state = view(sid)
            if observed is not None:
                for w in writes.get(key, ()):
                    if w.seq in state.imported or not vc_leq(w.vc, observed):
                        continue
                    state.imported.add(w.seq)
                    for k2, obs in w.frontier.items():
                        for ob in obs:
                            imported = Obligation(ob.vc, IMPORTED_AS[ob.kind], ob.path + (w.seq,))
                            _add(state.frontier, k2, imported)
            broken = [
                ob for ob in state.frontier.get(key, ())
                if observed is None or not vc_leq(ob.vc, observed)
            ]
            if broken:
                ob = min(broken, key=lambda o: (PRIORITY[o.kind], o.path))
                found.append((ob.kind, event, key, ob))
            if observed is not None:
                _add(state.frontier, key, Obligation(observed, MR, (event.seq,)))

        for key, vc, own in writes_of(event):
            state = view(sid) if own else SessionView()
            writes.setdefault(key, []).append(
                WriteRecord(seq=event.seq, key=key, vc=vc, frontier=_copy(state.frontier))
            )
            if own:
                _add(state.frontier, key, Obligation(vc, RYW, (event.seq,)))
    return found


def _describe(kind: ViolationKind, key: Key, ob: Obligation, event: TraceEvent) -> str:
    observed = reads_of(event)
    got = next((vc for k, vc in observed if k == key), None)
    seen = "nothing" if got is None else list(got)
    return f"{kind.value}: read of {key} returned {seen}, needs >= {list(ob.vc)}"


def _structure(trace: Sequence[TraceEvent], sessions: Iterable[str]) -> List[TraceEvent]:
    """FUNCTION_START events linking the given sessions to their ancestors."""
    parents = session_parents(trace)
    lineage = _lineage(sessions, parents)
    return [
        e for e in trace
        if e.kind == EventKind.FUNCTION_START and e.parents and e.session in lineage
    ]


def _witness(trace: Sequence[TraceEvent], event: TraceEvent, ob: Obligation) -> List[TraceEvent]:
    by_seq = {e.seq: e for e in trace}
    path = [by_seq[s] for s in ob.path if s in by_seq]
    events = {e.seq: e for e in path}
    events[event.seq] = event
    for e in _structure(trace, [event.session, *(p.session for p in path)]):
        if e.seq < event.seq:
            events[e.seq] = e
    return [events[s] for s in sorted(events)]


def _flags(trace: Sequence[TraceEvent], kind: ViolationKind, read_seq: int, key: Key) -> bool:
    return any(
        k == kind and event.seq == read_seq and k2 == key
        for k, event, k2, _ in _session_scan(trace)
    )


def minimize(
    witness: List[TraceEvent],
    still_violating: Callable[[List[TraceEvent]], bool],
    keep: Optional[int] = None,
) -> List[TraceEvent]:
    """Greedily drop events while the rest still violates. ``keep`` pins one event by seq."""
    current = list(witness)
    i = 0
    while i < len(current):
        if current[i].seq == keep:
            i += 1
            continue
        candidate = current[:i] + current[i + 1 :]
        if still_violating(candidate):
            current = candidate
        else:
            i += 1
    return current


def check_sessions(trace: Sequence[TraceEvent], minimize_witness: bool = True) -> List[Violation]:
    """Read-your-writes, monotonic reads, writes-follow-reads and monotonic writes."""
    violations: List[Violation] = []
    for kind, event, key, ob in _session_scan(trace):
        witness = _witness(trace, event, ob)
        if minimize_witness:
            witness = minimize(
                witness, lambda sub: _flags(sub, kind, event.seq, key), keep=event.seq
            )
        violations.append(
            Violation(
                kind=kind,
                detail=_describe(kind, key, ob, event),
                session=event.session,
                workflow=event.workflow,
                server=event.server,
                key=key,
                read_seq=event.seq,
                witness=witness,
            )
        )
    if violations:
        logger.info("session check: %d violation(s)", len(violations))
    return violations


# ============================================================================
# EXHAUSTIVE CHECKER (small traces)
# ============================================================================

@dataclass
class _Op:
    seq: int
    key: Key
    vc: Optional[VectorClock]
    is_write: bool
    session: Optional[str]


def _ops(trace: Sequence[TraceEvent]) -> List[_Op]:
    ops: List[_Op] = []
    for event in trace:
        for key, observed in reads_of(event):
            ops.append(_Op(event.seq, key, observed, False, event.session))
        for key, vc, own in writes_of(event):
            ops.append(_Op(event.seq, key, vc, True, event.session if own else None))
    return ops


def check_sessions_exhaustive(trace: Sequence[TraceEvent]) -> Set[Tuple[int, Key]]:
    """
    Flagged (read seq, key) pairs from the full happens-before closure over
    session order, function parents and reads-from edges.
    """
    ops = _ops(trace)
    if len(ops) > EXHAUSTIVE_LIMIT:
        raise ValueError(f"{len(ops)} operations is too many for the exhaustive checker")
    parents = session_parents(trace)
    ancestors: List[Set[int]] = []
    last_in_session: Dict[str, int] = {}
    for i, op in enumerate(ops):
        preds: Set[int] = set()
        if op.session is not None:
            if op.session in last_in_session:
                preds.add(last_in_session[op.session])
            else:
                for p in _lineage([op.session], parents) - {op.session}:
                    if p in last_in_session:
                        preds.add(last_in_session[p])
            last_in_session[op.session] = i
        if not op.is_write and op.vc is not None:
            for j in range(i):
                w = ops[j]
                if w.is_write and w.key == op.key and w.seq < op.seq and vc_leq(w.vc, op.vc):
                    preds.add(j)
        anc: Set[int] = set()
        for p in preds:
            anc |= ancestors[p] | {p}
        ancestors.append(anc)

    flagged: Set[Tuple[int, Key]] = set()
    for i, op in enumerate(ops):
        if op.is_write:
            continue
        for j in ancestors[i]:
            prior = ops[j]
            if prior.key != op.key or prior.vc is None or prior.seq == op.seq:
                continue
            if op.vc is None or not vc_leq(prior.vc, op.vc):
                flagged.add((op.seq, op.key))
    return flagged


def exhaustive_agrees(trace: Sequence[TraceEvent]) -> bool:
    incremental = {(v.read_seq, v.key) for v in check_sessions(trace, minimize_witness=False)}
    return incremental == check_sessions_exhaustive(trace)


# ============================================================================
# CUT COVERAGE, ATOMIC VISIBILITY, REPEATABLE READS
# ============================================================================

def _inherit(
    maps: Dict[str, Dict[Key, Tuple[VectorClock, int]]], event: TraceEvent
) -> None:
    if event.kind != EventKind.FUNCTION_START or not event.parents:
        return
    merged = maps.setdefault(event.session, {})
    for p in event.parents:
        for key, (vc, seq) in maps.get(p, {}).items():
            if key not in merged or not vc_leq(vc, merged[key][0]):
                merged[key] = (vc if key not in merged else vc_merge(merged[key][0], vc), seq)


def _planted(
    trace: Sequence[TraceEvent], kind: ViolationKind, event: TraceEvent, key: Key, prior_seq: int, detail: str
) -> Violation:
    by_seq = {e.seq: e for e in trace}
    witness = {event.seq: event}
    if prior_seq in by_seq:
        witness[prior_seq] = by_seq[prior_seq]
    for e in _structure(trace, [event.session, by_seq.get(prior_seq, event).session]):
        if e.seq < event.seq:
            witness[e.seq] = e
    return Violation(
        kind=kind,
        detail=detail,
        session=event.session,
        workflow=event.workflow,
        server=event.server,
        key=key,
        read_seq=event.seq,
        witness=[witness[s] for s in sorted(witness)],
    )


def check_cut_coverage(trace: Sequence[TraceEvent]) -> List[Violation]:
    """
    Per session lineage, every key accessed earlier must come back from a
    later read at a clock >= the one accessed.
    """
    accessed: Dict[str, Dict[Key, Tuple[VectorClock, int]]] = {}
    violations: List[Violation] = []
    for event in trace:
        sid = event.session
        if sid is None:
            continue
        _inherit(accessed, event)
        seen = accessed.setdefault(sid, {})
        for key, observed in reads_of(event):
            if key in seen:
                prev, prev_seq = seen[key]
                if observed is None or not vc_leq(prev, observed):
                    got = "nothing" if observed is None else list(observed)
                    violations.append(
                        _planted(trace, ViolationKind.CUT_COVERAGE, event, key, prev_seq,
                                 f"{key} went from {list(prev)} to {got}")
                    )
                    continue
            if observed is not None:
                seen[key] = (observed, event.seq)
        for key, vc, own in writes_of(event):
            if own:
                prev = seen.get(key)
                seen[key] = (vc if prev is None else vc_merge(prev[0], vc), event.seq)
    return violations


def check_atomic_visibility(trace: Sequence[TraceEvent]) -> List[Violation]:
    """
    A TCC read that observes a batch member must find every earlier member of
    the batch in the read version's deps or in the session's read set, and
    later reads of those keys must not fall below them.
    """
    members: Dict[Key, List[Tuple[VectorClock, int, int]]] = {}
    batches: Dict[int, List[Tuple[Key, VectorClock]]] = {}
    readsets: Dict[str, Dict[Key, Tuple[VectorClock, int]]] = {}
    certified: Dict[str, Dict[Key, Tuple[VectorClock, int]]] = {}
    violations: List[Violation] = []

    for event in trace:
        if event.kind == EventKind.BATCH_COMMIT:
            items = [(item.key, item.vc) for item in event.items or () if item.vc is not None]
            batches[event.seq] = items
            for pos, (key, vc) in enumerate(items):
                members.setdefault(key, []).append((vc, event.seq, pos))
            continue
        sid = event.session
        if sid is None:
            continue
        _inherit(readsets, event)
        _inherit(certified, event)
        if event.kind != EventKind.TCC_READ_REPLY:
            continue
        key = event.key
        observed = event.observed_vc if event.found else None
        readset = readsets.setdefault(sid, {})
        cert = certified.setdefault(sid, {})

        if key in cert:
            need, batch_seq = cert[key]
            if observed is None or not vc_leq(need, observed):
                violations.append(
                    _planted(trace, ViolationKind.ATOMIC_VISIBILITY, event, key, batch_seq,
                             f"{key} read below batch member {list(need)}")
                )
        if observed is None:
            continue
        readset[key] = (observed, event.seq)
        # Miss fills come from outside the cached cut and carry no deps.
        if event.detail == "miss":
            continue
        deps = event.deps or {}
        for vc, batch_seq, pos in members.get(key, ()):
            if not vc_leq(vc, observed):
                continue
            for earlier_key, earlier_vc in batches[batch_seq][:pos]:
                in_deps = earlier_key in deps and vc_leq(earlier_vc, deps[earlier_key])
                held = readset.get(earlier_key)
                in_readset = held is not None and vc_leq(earlier_vc, held[0])
                if held is not None and not in_readset:
                    violations.append(
                        _planted(trace, ViolationKind.ATOMIC_VISIBILITY, event, earlier_key, batch_seq,
                                 f"saw {key}@{list(vc)} but holds {earlier_key}@{list(held[0])}")
                    )
                elif not (in_deps or in_readset):
                    violations.append(
                        _planted(trace, ViolationKind.ATOMIC_VISIBILITY, event, earlier_key, batch_seq,
                                 f"saw {key}@{list(vc)} without {earlier_key}@{list(earlier_vc)}")
                    )
                prev = cert.get(earlier_key)
                cert[earlier_key] = (
                    earlier_vc if prev is None else vc_merge(prev[0], earlier_vc), batch_seq
                )
    return violations


def check_repeatable_reads(trace: Sequence[TraceEvent]) -> List[Violation]:
    """Within one TCC session lineage every read of a key returns the same clock."""
    first: Dict[str, Dict[Key, Tuple[VectorClock, int]]] = {}
    violations: List[Violation] = []
    for event in trace:
        sid = event.session
        if sid is None:
            continue
        _inherit(first, event)
        if event.kind != EventKind.TCC_READ_REPLY or not event.found:
            continue
        seen = first.setdefault(sid, {})
        observed = event.observed_vc
        if event.key in seen and seen[event.key][0] != observed:
            prev, prev_seq = seen[event.key]
            violations.append(
                _planted(trace, ViolationKind.REPEATABLE_READ, event, event.key, prev_seq,
                         f"{event.key} read as {list(prev)} then {list(observed)}")
            )
        else:
            seen.setdefault(event.key, (observed, event.seq))
    return violations


# ============================================================================
# SELF-VALIDATION
# ============================================================================

TRACE_CHECKS: Dict[ViolationKind, Callable[[Sequence[TraceEvent]], List[Violation]]] = {
    ViolationKind.CUT_COVERAGE: check_cut_coverage,
    ViolationKind.ATOMIC_VISIBILITY: check_atomic_visibility,
    ViolationKind.REPEATABLE_READ: check_repeatable_reads,
}


def revalidate(violation: Violation) -> bool:
    """Re-run the originating check on the witness alone."""
    if not violation.witness:
        return True
    if violation.kind in SESSION_KINDS:
        return _flags(violation.witness, violation.kind, violation.read_seq, violation.key)
    check = TRACE_CHECKS.get(violation.kind)
    if check is None:
        return True
    return any(
        v.kind == violation.kind and v.read_seq == violation.read_seq and v.key == violation.key
        for v in check(violation.witness)
    )
