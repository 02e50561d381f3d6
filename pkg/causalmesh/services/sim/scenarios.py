"""
Scripted scenarios.

A ScenarioScript is a SimConfig plus a list of steps driven by named client
sessions: client operations at a chosen server, session migration, and
control steps that move simulated time. The same client steps run against a
TCP cluster through ``ScriptRunner`` with a different handle factory.
"""

import logging
from enum import Enum
from typing import Callable, Dict, List, Optional

from pydantic import BaseModel, Field

from causalmesh.errors import ConfigurationError, NotFoundError, ProtocolInvariantError, TransactionAborted
from causalmesh.schemas.config import FaultSpec, PropagationMode, SimConfig
from causalmesh.schemas.trace import EventKind, RunResult
from causalmesh.services.client.library import (
    ServerHandle,
    client_read,
    client_read_txn,
    client_write,
    tcc_commit,
    tcc_read,
    tcc_write,
)
from causalmesh.services.client.session import ClientSession, TccSession, migrate, restore
from causalmesh.services.core.versions import Key, WireBytes
from causalmesh.services.sim.simulator import SimHandle, Simulator, SnapshotSink
from causalmesh.services.sim.workflow import WorkflowDag

logger = logging.getLogger(__name__)


class StepKind(str, Enum):
    READ = "read"
    WRITE = "write"
    READ_TXN = "read_txn"
    TCC_READ = "tcc_read"
    TCC_WRITE = "tcc_write"
    COMMIT = "commit"
    MIGRATE = "migrate"
    AWAIT_TAIL = "await_tail"
    ADVANCE = "advance"
    DRAIN = "drain"
    SNAPSHOT = "snapshot"


CLIENT_STEPS = frozenset(
    {StepKind.READ, StepKind.WRITE, StepKind.READ_TXN, StepKind.TCC_READ, StepKind.TCC_WRITE, StepKind.COMMIT}
)


class ScriptStep(BaseModel):
    kind: StepKind
    session: Optional[str] = Field(default=None, description="Named client session")
    server: int = Field(default=0, description="Server the operation goes to")
    key: Optional[Key] = None
    keys: List[Key] = Field(default_factory=list, description="Read transaction keys")
    value: Optional[WireBytes] = None
    until: Optional[int] = Field(default=None, description="Logical time for advance")
    target: Optional[str] = Field(
        default=None, description="Session name the migrated context continues under"
    )


class ScenarioScript(BaseModel):
    name: str
    config: SimConfig = Field(default_factory=SimConfig)
    steps: List[ScriptStep] = Field(default_factory=list)
    workflows: List[WorkflowDag] = Field(default_factory=list, description="Background workflows")

    def check(self) -> "ScenarioScript":
        self.config.check()
        for i, step in enumerate(self.steps):
            if step.kind in CLIENT_STEPS or step.kind == StepKind.MIGRATE:
                if not step.session:
                    raise ConfigurationError(f"step {i} ({step.kind.value}) needs a session")
            if step.kind in (StepKind.READ, StepKind.WRITE, StepKind.TCC_READ, StepKind.TCC_WRITE,
                             StepKind.AWAIT_TAIL) and not step.key:
                raise ConfigurationError(f"step {i} ({step.kind.value}) needs a key")
            if step.kind == StepKind.READ_TXN and not step.keys:
                raise ConfigurationError(f"step {i} (read_txn) needs keys")
            if step.kind == StepKind.ADVANCE and step.until is None:
                raise ConfigurationError(f"step {i} (advance) needs until")
            if not 0 <= step.server < self.config.n:
                raise ConfigurationError(f"step {i}: server {step.server} out of range")
        return self


HandleFactory = Callable[[int, ClientSession], ServerHandle]


class ScriptRunner:
    """Runs the client steps of a script; control steps go to ``control``."""

    def __init__(self, script: ScenarioScript, handle_for: HandleFactory):
        self.script = script.check()
        self.handle_for = handle_for
        self.session_cls = TccSession if script.config.tcc else ClientSession
        self.sessions: Dict[str, ClientSession] = {}

    def session(self, name: str) -> ClientSession:
        if name not in self.sessions:
            self.sessions[name] = self.session_cls(workflow=name, session_id=name)
        return self.sessions[name]

    def control(self, step: ScriptStep) -> bool:
        return True

    def run_step(self, step: ScriptStep) -> bool:
        """Run one step; False stops the script."""
        if step.kind not in CLIENT_STEPS and step.kind != StepKind.MIGRATE:
            return self.control(step)
        sess = self.session(step.session)
        handle = self.handle_for(step.server, sess)
        try:
            if step.kind == StepKind.READ:
                client_read(sess, handle, step.key)
            elif step.kind == StepKind.WRITE:
                client_write(sess, handle, step.key, step.value or b"")
            elif step.kind == StepKind.READ_TXN:
                client_read_txn(sess, handle, step.keys)
            elif step.kind == StepKind.TCC_READ:
                tcc_read(sess, handle, step.key)
            elif step.kind == StepKind.TCC_WRITE:
                tcc_write(sess, step.key, step.value or b"")
            elif step.kind == StepKind.COMMIT:
                tcc_commit(sess, handle)
            else:
                self._migrate(step, sess, handle)
        except NotFoundError:
            logger.info("script %s: %s not found", self.script.name, step.key)
        except TransactionAborted as e:
            logger.info("script %s: %s aborted on %s", self.script.name, step.session, e.key)
        return True

    def _migrate(self, step: ScriptStep, sess: ClientSession, handle: ServerHandle) -> None:
        name = step.target or step.session
        moved = restore(migrate(sess), self.session_cls)
        parents = None
        if step.target:
            moved = moved.model_copy(update={"session_id": name, "workflow": sess.workflow})
            parents = [sess.session_id]
        self.sessions[name] = moved
        handle.record(EventKind.FUNCTION_START, session=moved.session_id, parents=parents, detail="migrate")

    def run(self) -> None:
        for step in self.script.steps:
            if not self.run_step(step):
                logger.warning("script %s stopped at %s", self.script.name, step.kind.value)
                return


class SimScriptRunner(ScriptRunner):
    def __init__(self, script: ScenarioScript, snapshot_sink: Optional[SnapshotSink] = None):
        self.sim = Simulator(script.config, script.workflows, snapshot_sink=snapshot_sink)
        super().__init__(script, lambda server, sess: SimHandle(self.sim, server, sess.workflow))
        for i, wf in enumerate(self.sim.runs):
            self.sim.schedule(i * script.config.arrival_interval, ("start_workflow", wf, 0))

    def _written_clock(self, key: Key):
        for event in reversed(self.sim.trace):
            if event.kind == EventKind.CLIENT_WRITE_REPLY and event.key == key:
                return event.vc
            if event.kind == EventKind.BATCH_COMMIT:
                for item in event.items or []:
                    if item.key == key:
                        return item.vc
        return None

    def _integrated(self, key: Key, vc) -> bool:
        return any(
            e.kind == EventKind.TAIL_INTEGRATE and e.key == key and e.vc == vc for e in self.sim.trace
        )

    def control(self, step: ScriptStep) -> bool:
        sim = self.sim
        if step.kind == StepKind.AWAIT_TAIL:
            vc = self._written_clock(step.key)
            if vc is None:
                raise ConfigurationError(f"await_tail on {step.key} before any write of it")
            if not sim.run_until(lambda: self._integrated(step.key, vc)):
                logger.warning("write %s@%s never reached its tail", step.key, list(vc))
        elif step.kind == StepKind.ADVANCE:
            sim.run_until(until=step.until)
        elif step.kind == StepKind.DRAIN:
            sim.run_until()
        elif step.kind == StepKind.SNAPSHOT:
            sim.take_snapshot("script")
        return sim.fatal is None

    def run_step(self, step: ScriptStep) -> bool:
        try:
            return super().run_step(step)
        except ProtocolInvariantError as e:
            self.sim._diagnose(e)
            return False


def run_script(script: ScenarioScript, snapshot_sink: Optional[SnapshotSink] = None) -> RunResult:
    runner = SimScriptRunner(script, snapshot_sink)
    runner.run()
    return runner.sim.result()


# ============================================================================
# BUILT-IN SCENARIOS
# ============================================================================

def _step(kind: StepKind, **fields) -> ScriptStep:
    return ScriptStep(kind=kind, **fields)


def roaming_script(**config) -> ScenarioScript:
    """
    c1 writes x then y at S0; once y is tail-integrated c2 reads y at S2,
    migrates and reads x at S1, where x is still only in the I-cache.
    """
    return ScenarioScript(
        name="roaming",
        config=SimConfig(n=3, **config),
        steps=[
            _step(StepKind.WRITE, session="c1", server=0, key="x", value=b"x0"),
            _step(StepKind.WRITE, session="c1", server=0, key="y", value=b"y0"),
            _step(StepKind.AWAIT_TAIL, key="y"),
            _step(StepKind.READ, session="c2", server=2, key="y"),
            _step(StepKind.MIGRATE, session="c2", server=1),
            _step(StepKind.READ, session="c2", server=1, key="x"),
            _step(StepKind.DRAIN),
        ],
    )


STALL_LENGTH = 1000


def stalled_link_script(
    mode: PropagationMode = PropagationMode.SINGLE_ROUND_BUGGY, **config
) -> ScenarioScript:
    """
    S0's writes of x and y are stuck on a stalled S0->S1 link while c2 writes
    y and z at S1. In single-round mode z's tail at S0 drags x into S0's
    C-cache before S1 or S2 have seen it; c3 then reads x at S0 and asks S2
    for a dependency S2 cannot satisfy.
    """
    return ScenarioScript(
        name="stalled_link",
        config=SimConfig(
            n=3,
            propagation_mode=mode,
            faults=[FaultSpec(link=(0, 1), start=0, duration=STALL_LENGTH)],
            snapshot_on_tail=True,
            **config,
        ),
        steps=[
            _step(StepKind.WRITE, session="c1", server=0, key="x", value=b"x0"),
            _step(StepKind.WRITE, session="c1", server=0, key="y", value=b"y0"),
            _step(StepKind.WRITE, session="c2", server=1, key="y", value=b"y1"),
            _step(StepKind.WRITE, session="c2", server=1, key="z", value=b"z1"),
            _step(StepKind.ADVANCE, until=STALL_LENGTH // 2),
            _step(StepKind.READ, session="c3", server=0, key="z"),
            _step(StepKind.READ, session="c3", server=0, key="x"),
            _step(StepKind.READ, session="c3", server=2, key="x"),
            _step(StepKind.DRAIN),
        ],
    )


# Writes of the first key per contention batch; the second key gets one.
CONTENTION_FAN = 4


def ring_contention_script(readers: int = 8, **config) -> ScenarioScript:
    """
    Single-server TCC run where every reader reads a, then b, while 0..3 batches
    commit in between. Each batch writes a several times and b once, so b
    depends on the newest a. Whether a reader's b read still finds a version
    older than the a it holds depends on how much history the rings keep.
    """
    steps: List[ScriptStep] = []
    batches = 0

    def batch() -> None:
        nonlocal batches
        name = f"w{batches}"
        for i in range(CONTENTION_FAN):
            steps.append(_step(StepKind.TCC_WRITE, session=name, key="a", value=f"a{batches}.{i}".encode()))
        steps.append(_step(StepKind.TCC_WRITE, session=name, key="b", value=f"b{batches}".encode()))
        steps.append(_step(StepKind.COMMIT, session=name))
        batches += 1

    for _ in range(CONTENTION_FAN):
        batch()
    for r in range(readers):
        steps.append(_step(StepKind.TCC_READ, session=f"r{r}", key="a"))
        for _ in range(r % CONTENTION_FAN):
            batch()
        steps.append(_step(StepKind.TCC_READ, session=f"r{r}", key="b"))
    return ScenarioScript(name="ring_contention", config=SimConfig(n=1, tcc=True, **config), steps=steps)


SCENARIOS: Dict[str, Callable[..., ScenarioScript]] = {
    "roaming": roaming_script,
    "stalled_link": stalled_link_script,
}

# Older names the command line still accepts.
SCENARIO_ALIASES: Dict[str, str] = {"fig8": "roaming", "fig17": "stalled_link"}


def scenario_names() -> List[str]:
    return sorted([*SCENARIOS, *SCENARIO_ALIASES])


def load_scenario(name: str, mode: Optional[PropagationMode] = None, **config) -> ScenarioScript:
    name = SCENARIO_ALIASES.get(name, name)
    builder = SCENARIOS.get(name)
    if builder is None:
        raise ConfigurationError(f"unknown scenario {name!r}; known: {', '.join(scenario_names())}")
    if name == "stalled_link" and mode is not None:
        return builder(mode, **config)
    if mode is not None:
        config["propagation_mode"] = mode
    return builder(**config)
