"""
Deterministic discrete-event simulator.

Time is an integer. Pending actions sit in a heap keyed by (time, seq), where
seq is a global insertion counter, so equal-time actions run in the order
they were scheduled. Every action runs to completion against one server
before the next one starts.

Channels are FIFO per directed pair: a message's delivery time is clamped to
be no earlier than the previous message's on the same channel, and stalls
only push delivery times later. All randomness comes from one seeded numpy
Generator, so (config, workload) fully determines the trace.
"""

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from causalmesh.errors import (
    NotFoundError,
    ProtocolInvariantError,
    TransactionAborted,
    UnsatisfiableDependencyError,
)
from causalmesh.schemas.config import (
    BaselineMode,
    DelayProfile,
    FlushMode,
    RoamingPolicy,
    SimConfig,
    WorkloadSpec,
)
from causalmesh.schemas.request import PropagateMsg, ReplicateMsg
from causalmesh.schemas.trace import (
    EventKind,
    RunResult,
    SnapshotRecord,
    TraceEvent,
    TraceItem,
    WorkflowOutcome,
)
from causalmesh.services.client.library import (
    client_read,
    client_read_txn,
    client_write,
    tcc_commit,
    tcc_read,
    tcc_write,
)
from causalmesh.services.client.session import ClientSession, TccSession, join_sessions, migrate, restore
from causalmesh.services.core.clocks import zero_clock
from causalmesh.services.core.versions import Version
from causalmesh.services.server.state_machine import ActionResult, CausalMeshServer
from causalmesh.services.sim.baseline import (
    EventualServer,
    baseline_read,
    baseline_read_txn,
    baseline_write,
)
from causalmesh.services.sim.workflow import OpKind, OpSpec, WorkflowDag
from causalmesh.services.store.versioned_store import VersionedStore
from causalmesh.services.tcc.tcc_server import TccServer, validate_parallel

logger = logging.getLogger(__name__)

SnapshotSink = Callable[[SnapshotRecord], None]

# Shape of heavy-tail delays (bounded Pareto).
PARETO_ALPHA = 1.2


def bounded_pareto(rng: np.random.Generator, alpha: float, low: float, high: float) -> float:
    u = rng.random()
    ha = high ** alpha
    la = low ** alpha
    return (-(u * ha - u * la - ha) / (ha * la)) ** (-1.0 / alpha)


@dataclass
class FunctionRun:
    node: int
    session: ClientSession
    server: int
    op_index: int = 0
    retries: int = 0


@dataclass
class WorkflowRun:
    dag: WorkflowDag
    attempt: int = 0
    aborts: int = 0
    status: str = "pending"
    read_txn_overlap: bool = False
    sticky: Optional[int] = None
    remaining: Dict[int, int] = field(default_factory=dict)
    active: Dict[int, FunctionRun] = field(default_factory=dict)
    finished: Dict[int, str] = field(default_factory=dict)
    started: Set[int] = field(default_factory=set)

    @property
    def id(self) -> str:
        return self.dag.id

    def session_id(self, node: int) -> str:
        return f"{self.dag.id}#{self.attempt}.f{node}"


class SimHandle:
    """ServerHandle bound to one server and one workflow for the simulator."""

    def __init__(self, sim: "Simulator", index: int, workflow: Optional[str]):
        self.sim = sim
        self.index = index
        self.workflow = workflow

    def call(self, request: Any) -> Any:
        return self.sim.execute(self.index, request)

    def record(self, kind: EventKind, **fields: Any) -> None:
        self.sim.record(kind, server=self.index, workflow=self.workflow, **fields)


class Simulator:
    def __init__(
        self,
        config: SimConfig,
        workflows: Sequence[WorkflowDag] = (),
        store: Optional[VersionedStore] = None,
        snapshot_sink: Optional[SnapshotSink] = None,
        preload: Sequence[str] = (),
    ):
        self.config = config.check()
        self.n = config.n
        self.rng = np.random.default_rng(config.seed)
        self.store = store if store is not None else VersionedStore()
        self.servers = [self._make_server(i) for i in range(self.n)]
        self.now = 0
        self.steps = 0
        self.trace: List[TraceEvent] = []
        self.snapshots: List[SnapshotRecord] = []
        self.stats: Counter = Counter()
        self.fatal: Optional[str] = None
        self._queue: List[Tuple[int, int, Tuple]] = []
        self._seq = 0
        self._channel_tail: Dict[Tuple[int, int], int] = {}
        self._rr = 0
        self._tail_snapshot_due = False
        self._snapshot_sink = snapshot_sink
        self.runs: List[WorkflowRun] = []

        keys = list(preload) or [f"k{i}" for i in range(config.preload_keys)]
        for key in keys:
            self._preload(key)
        for dag in workflows:
            dag = dag.check()
            if config.tcc:
                dag = dag.with_sink()
            self.runs.append(WorkflowRun(dag=dag))

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @property
    def mode(self) -> str:
        if self.baseline:
            return BaselineMode.EVENTUAL_BASELINE.value
        return "tcc" if self.config.tcc else BaselineMode.CAUSALMESH.value

    @property
    def baseline(self) -> bool:
        return self.config.baseline_mode == BaselineMode.EVENTUAL_BASELINE

    def _make_server(self, i: int):
        if self.baseline:
            return EventualServer(i, self.n, self.store)
        server_config = self.config.server_config()
        if self.config.tcc:
            return TccServer(i, self.n, server_config, self.store)
        return CausalMeshServer(i, self.n, server_config, self.store)

    def _preload(self, key: str) -> None:
        version = Version(key=key, value=b"init", vc=zero_clock(self.n))
        self.store.put(version)
        for server in self.servers:
            server.seed(version)

    # ------------------------------------------------------------------
    # Event queue
    # ------------------------------------------------------------------

    def schedule(self, time: int, action: Tuple) -> None:
        heapq.heappush(self._queue, (time, self._seq, action))
        self._seq += 1

    def pending(self) -> int:
        return len(self._queue)

    def record(self, kind: EventKind, **fields: Any) -> TraceEvent:
        event = TraceEvent(seq=len(self.trace), time=self.now, kind=kind, **fields)
        self.trace.append(event)
        return event

    # ------------------------------------------------------------------
    # Network
    # ------------------------------------------------------------------

    def _sample_delay(self) -> int:
        lo, hi = self.config.delay_range
        if lo == hi:
            return lo
        if self.config.delay_profile == DelayProfile.HEAVY_TAIL:
            sample = bounded_pareto(self.rng, PARETO_ALPHA, max(lo, 1), hi)
            return int(min(hi, max(lo, round(sample))))
        return int(self.rng.integers(lo, hi + 1))

    def _stall(self, src: int, dst: int, t: int) -> int:
        for fault in sorted(self.config.faults, key=lambda f: f.start):
            if tuple(fault.link) == (src, dst) and fault.start <= t < fault.end:
                t = fault.end
        return t

    def delivery_time(self, src: int, dst: int) -> int:
        t = self._stall(src, dst, self.now + self._sample_delay())
        t = max(t, self._channel_tail.get((src, dst), 0))
        self._channel_tail[(src, dst)] = t
        return t

    def send(self, src: int, dst: int, msg: Any) -> None:
        t = self.delivery_time(src, dst)
        if isinstance(msg, PropagateMsg):
            v = msg.version
            self.record(
                EventKind.PROPAGATE_SEND, server=src, key=v.key, vc=v.vc, origin=msg.origin, hop=msg.hop
            )
        self.stats["messages"] += 1
        self.schedule(t, ("deliver", src, dst, msg))

    # ------------------------------------------------------------------
    # Server actions
    # ------------------------------------------------------------------

    def execute(self, index: int, request: Any) -> Any:
        result = self.servers[index].handle(request)
        self._apply(index, result)
        return result.reply

    def _apply(self, index: int, result: ActionResult) -> None:
        if result.store_writes:
            if self.config.flush_mode == FlushMode.ASYNC_LOG:
                flush = ("flush", index, list(result.store_writes))
                self.schedule(self.now + self.config.store_latency, flush)
            else:
                for version in result.store_writes:
                    self.store.put(version)
        for kind, fields in result.events:
            self.record(kind, server=index, **fields)
            if kind == EventKind.TAIL_INTEGRATE:
                self.stats["tail_integrations"] += 1
                self._tail_snapshot_due = True
        for dst, msg in result.sends:
            self.send(index, dst, msg)

    def _deliver(self, src: int, dst: int, msg: Any) -> None:
        if isinstance(msg, (PropagateMsg, ReplicateMsg)):
            v = msg.version
            self.record(
                EventKind.PROPAGATE_DELIVER,
                server=dst,
                key=v.key,
                vc=v.vc,
                origin=msg.origin,
                hop=getattr(msg, "hop", None),
            )
        self.execute(dst, msg)

    def _flush(self, index: int, versions: List[Version]) -> None:
        for version in versions:
            self.store.put(version)
        self.record(
            EventKind.STORE_FLUSH,
            server=index,
            items=[TraceItem(key=v.key, vc=v.vc) for v in versions],
        )

    # ------------------------------------------------------------------
    # Snapshots
    # ------------------------------------------------------------------

    def take_snapshot(self, reason: str, with_store: bool = False) -> SnapshotRecord:
        record = SnapshotRecord.model_construct(
            step=self.steps,
            time=self.now,
            trace_len=len(self.trace),
            reason=reason,
            mode=self.mode,
            servers=[s.snapshot() for s in self.servers],
            store=self.store.snapshot() if with_store else None,
        )
        if self._snapshot_sink is not None:
            self._snapshot_sink(record)
        else:
            self.snapshots.append(record)
        return record

    def _maybe_snapshot(self) -> None:
        if self._tail_snapshot_due and self.config.snapshot_on_tail:
            self.take_snapshot("tail")
        elif self.config.snapshot_every and self.steps % self.config.snapshot_every == 0:
            self.take_snapshot("periodic")
        self._tail_snapshot_due = False

    # ------------------------------------------------------------------
    # Stepping
    # ------------------------------------------------------------------

    def deliver_next(self) -> List[TraceEvent]:
        """Run the earliest pending action; return the events it recorded."""
        time, _, action = heapq.heappop(self._queue)
        self.now = max(self.now, time)
        mark = len(self.trace)
        kind = action[0]
        if kind == "deliver":
            self._deliver(*action[1:])
        elif kind == "flush":
            self._flush(*action[1:])
        elif kind == "start_workflow":
            self._start_workflow(*action[1:])
        elif kind == "start_function":
            self._start_function(*action[1:])
        elif kind == "op":
            self._run_op(*action[1:])
        else:
            raise ProtocolInvariantError(f"unknown action {kind!r}")
        self.steps += 1
        self._maybe_snapshot()
        return self.trace[mark:]

    def _diagnose(self, error: ProtocolInvariantError) -> None:
        self.fatal = str(error)
        logger.error("run stopped: %s", error)
        if isinstance(error, UnsatisfiableDependencyError):
            self.record(
                EventKind.DIAGNOSTIC,
                server=error.server,
                key=error.key,
                vc=error.vc,
                detail=f"unsatisfiable dependency: {error}",
            )
        else:
            self.record(EventKind.DIAGNOSTIC, detail=str(error))

    def run_until(self, stop: Callable[[], bool] = lambda: False, until: Optional[int] = None) -> bool:
        """Step until stop() holds, the queue drains or the next action is later than until."""
        budget = self.config.step_budget
        try:
            while self._queue and self.fatal is None:
                if stop():
                    return True
                if until is not None and self._queue[0][0] > until:
                    break
                if self.steps >= budget:
                    self.fatal = f"no quiescence within {budget} steps"
                    self.record(EventKind.DIAGNOSTIC, detail=self.fatal)
                    break
                self.deliver_next()
        except ProtocolInvariantError as e:
            self._diagnose(e)
        if until is not None and self.fatal is None:
            self.now = max(self.now, until)
        return stop()

    def run(self) -> RunResult:
        for i, wf in enumerate(self.runs):
            self.schedule(i * self.config.arrival_interval, ("start_workflow", wf, 0))
        self.run_until()
        return self.result()

    def result(self) -> RunResult:
        self.stats["steps"] = self.steps
        self.stats["events"] = len(self.trace)
        self.stats["aborts"] = sum(r.aborts for r in self.runs)
        self.stats["failed"] = sum(1 for r in self.runs if r.status == "failed")
        outcomes = [
            WorkflowOutcome(
                workflow=r.id,
                status=r.status,
                attempts=r.attempt + 1,
                aborts=r.aborts,
                read_txn_overlap=r.read_txn_overlap,
            )
            for r in self.runs
        ]
        return RunResult.model_construct(
            trace=self.trace,
            snapshots=self.snapshots,
            final=self._final_snapshot(),
            workflows=outcomes,
            stats=dict(self.stats),
            fatal=self.fatal,
            n=self.n,
        )

    def _final_snapshot(self) -> SnapshotRecord:
        return SnapshotRecord.model_construct(
            step=self.steps,
            time=self.now,
            trace_len=len(self.trace),
            reason="final",
            mode=self.mode,
            servers=[s.snapshot() for s in self.servers],
            store=self.store.snapshot(),
        )

    # ------------------------------------------------------------------
    # Placement
    # ------------------------------------------------------------------

    def place_function(self, run: WorkflowRun, node: int) -> int:
        policy = self.config.roaming_policy
        if policy == RoamingPolicy.ROUND_ROBIN:
            server = self._rr % self.n
            self._rr += 1
            return server
        if policy == RoamingPolicy.STICKY:
            if run.sticky is None:
                run.sticky = int(self.rng.integers(self.n))
            return run.sticky
        return int(self.rng.integers(self.n))

    # ------------------------------------------------------------------
    # Workflow execution
    # ------------------------------------------------------------------

    def _start_workflow(self, run: WorkflowRun, attempt: int) -> None:
        if attempt != run.attempt:
            return
        dag = run.dag
        run.status = "running"
        run.remaining = {i: len(dag.predecessors(i)) for i in range(len(dag.functions))}
        run.active.clear()
        run.finished.clear()
        run.started.clear()
        self.record(EventKind.WORKFLOW_START, workflow=run.id, detail=f"attempt {attempt}")
        for node in dag.sources():
            self.schedule(self.now, ("start_function", run, attempt, node))

    def _fresh_session(self, run: WorkflowRun, node: int) -> ClientSession:
        cls = TccSession if self.config.tcc else ClientSession
        return cls(workflow=run.id, session_id=run.session_id(node))

    def _start_function(self, run: WorkflowRun, attempt: int, node: int) -> None:
        if attempt != run.attempt or run.status == "failed" or node in run.started:
            return
        run.started.add(node)
        preds = run.dag.predecessors(node)
        cls = TccSession if self.config.tcc else ClientSession
        parents = [restore(run.finished[p], cls) for p in preds]
        sid = run.session_id(node)
        if not parents:
            session = self._fresh_session(run, node)
        else:
            if self.config.tcc and len(parents) > 1 and not validate_parallel(
                [p.readset for p in parents]
            ):
                self.record(
                    EventKind.ABORT, workflow=run.id, session=sid, detail="validate_parallel"
                )
                run.aborts += 1
                self._restart(run)
                return
            session = join_sessions(parents, sid)
        server = self.place_function(run, node)
        self.record(
            EventKind.FUNCTION_START,
            server=server,
            workflow=run.id,
            session=sid,
            parents=[p.session_id for p in parents] or None,
            detail=run.dag.functions[node].name,
        )
        run.active[node] = FunctionRun(node=node, session=session, server=server)
        self._run_op(run, attempt, node)

    def _run_op(self, run: WorkflowRun, attempt: int, node: int) -> None:
        if attempt != run.attempt or run.status == "failed" or node not in run.active:
            return
        fr = run.active[node]
        ops = run.dag.functions[node].ops
        if fr.op_index >= len(ops):
            self._finish_function(run, node)
            return
        op = ops[fr.op_index]
        handle = SimHandle(self, fr.server, run.id)
        reads_before = self.store.reads
        try:
            self._execute_op(run, fr, op, handle)
        except NotFoundError:
            self.stats["not_found"] += 1
        except TransactionAborted:
            run.aborts += 1
            if self.config.tcc:
                self._restart(run)
                return
            fr.retries += 1
            if fr.retries > self.config.txn_retry_limit:
                self._fail(run, "read_txn retry limit")
                return
            fr.server = self.place_function(run, node)
            self.record(
                EventKind.FUNCTION_START,
                server=fr.server,
                workflow=run.id,
                session=fr.session.session_id,
                detail=f"{run.dag.functions[node].name} redispatch {fr.retries}",
            )
            self.schedule(self.now + self.config.retry_backoff, ("op", run, attempt, node))
            return
        fr.op_index += 1
        delay = self.config.op_gap
        if self.store.reads > reads_before:
            delay += self.config.store_latency
        if fr.op_index >= len(ops):
            self._finish_function(run, node, delay)
        else:
            self.schedule(self.now + delay, ("op", run, attempt, node))

    def _execute_op(self, run: WorkflowRun, fr: FunctionRun, op: OpSpec, handle: SimHandle) -> None:
        sess = fr.session
        if op.kind == OpKind.READ_TXN and any(k in sess.local for k in op.keys):
            run.read_txn_overlap = True
        if self.baseline:
            if op.kind in (OpKind.READ, OpKind.TCC_READ):
                baseline_read(sess, handle, op.key)
            elif op.kind in (OpKind.WRITE, OpKind.TCC_WRITE):
                baseline_write(sess, handle, op.key, op.value or b"")
            else:
                baseline_read_txn(sess, handle, op.keys)
            return
        if op.kind == OpKind.READ:
            client_read(sess, handle, op.key)
        elif op.kind == OpKind.WRITE:
            client_write(sess, handle, op.key, op.value or b"")
        elif op.kind == OpKind.READ_TXN:
            client_read_txn(sess, handle, op.keys)
        elif op.kind == OpKind.TCC_READ:
            tcc_read(sess, handle, op.key)
        elif op.kind == OpKind.TCC_WRITE:
            tcc_write(sess, op.key, op.value or b"")
        else:
            raise ProtocolInvariantError(f"unknown op {op.kind}")

    def _finish_function(self, run: WorkflowRun, node: int, delay: int = 0) -> None:
        fr = run.active.pop(node)
        dag = run.dag
        successors = dag.successors(node)
        if self.config.tcc and not successors:
            tcc_commit(fr.session, SimHandle(self, fr.server, run.id))
        run.finished[node] = migrate(fr.session)
        for succ in successors:
            run.remaining[succ] -= 1
            if run.remaining[succ] == 0:
                action = ("start_function", run, run.attempt, succ)
                self.schedule(self.now + delay + self.config.op_gap, action)
        if len(run.finished) == len(dag.functions):
            run.status = "committed"
            self.record(EventKind.WORKFLOW_END, workflow=run.id, detail="committed")

    def _restart(self, run: WorkflowRun) -> None:
        if run.attempt >= self.config.tcc_retry_limit:
            self._fail(run, "tcc retry limit")
            return
        run.attempt += 1
        run.active.clear()
        self.schedule(self.now + self.config.retry_backoff, ("start_workflow", run, run.attempt))

    def _fail(self, run: WorkflowRun, reason: str) -> None:
        run.status = "failed"
        run.active.clear()
        self.record(EventKind.WORKFLOW_END, workflow=run.id, detail=f"failed: {reason}")
        logger.info("workflow %s failed: %s", run.id, reason)


def sim_run(
    config: SimConfig,
    workload: Union[WorkloadSpec, Sequence[WorkflowDag]],
    snapshot_sink: Optional[SnapshotSink] = None,
) -> RunResult:
    """Run a workload to quiescence and return the trace plus snapshots."""
    if isinstance(workload, WorkloadSpec):
        from causalmesh.services.workload.generators import generate_workflows

        workflows = generate_workflows(workload)
    else:
        workflows = list(workload)
    return Simulator(config, workflows, snapshot_sink=snapshot_sink).run()


def deliver_next(sim: Simulator) -> List[TraceEvent]:
    return sim.deliver_next()


def place_function(sim: Simulator, run: WorkflowRun, node: int) -> int:
    return sim.place_function(run, node)


def measure_visibility(trace: Sequence[TraceEvent], write: TraceEvent) -> Tuple[int, Optional[int]]:
    """
    Hops and latency from a CLIENT_WRITE_REPLY to the tail integration of the
    same version. Latency is None when the version never reached its tail.
    """
    hops = 0
    for event in trace[write.seq + 1 :]:
        if event.vc != write.vc or event.key != write.key:
            continue
        if event.kind == EventKind.PROPAGATE_DELIVER:
            hops += 1
        elif event.kind == EventKind.TAIL_INTEGRATE:
            return hops, event.time - write.time
    return hops, None
