"""
TCP runner: one server state machine per process, plus a blocking client.

Each process listens on its own address from the peer list and keeps exactly
one outbound connection per peer, so messages to a given peer leave in the
order they were produced and TCP keeps that order on the wire. Every inbound
frame, from clients and peers alike, goes through a single executor queue so
handlers run one at a time against the server state.
"""

import asyncio
import contextlib
import logging
import socket
import time
from typing import Any, Dict, List, Optional, Set

from causalmesh.config import CONNECT_BACKOFF, CONNECT_RETRIES, MAX_BACKOFF
from causalmesh.errors import (
    CausalMeshError,
    ConfigurationError,
    FrameDecodeError,
    UnsatisfiableDependencyError,
)
from causalmesh.schemas.config import PeerAddress, PeerList, PropagationMode, ServerConfig
from causalmesh.schemas.request import IntegrateHint, PeerHello, PropagateMsg, ReplicateMsg
from causalmesh.schemas.response import ErrorReply
from causalmesh.schemas.trace import EventKind, ServerSnapshot, TraceEvent
from causalmesh.services.network.framing import (
    decode_reply,
    decode_request,
    read_frame,
    recv_frame,
    send_frame,
    write_frame,
)
from causalmesh.services.server.state_machine import ActionResult, CausalMeshServer
from causalmesh.services.sim.scenarios import ScenarioScript, ScriptRunner, ScriptStep, StepKind
from causalmesh.services.store.versioned_store import VersionedStore
from causalmesh.services.tcc.tcc_server import TccServer
from causalmesh.websocket.manager import ConnectionManager

logger = logging.getLogger(__name__)

PEER_MESSAGES = (PropagateMsg, IntegrateHint, ReplicateMsg, PeerHello)


class ServerProcess:
    def __init__(
        self,
        index: int,
        peers: PeerList,
        config: Optional[ServerConfig] = None,
        store: Optional[VersionedStore] = None,
        manager: Optional[ConnectionManager] = None,
        retries: int = CONNECT_RETRIES,
        backoff: float = CONNECT_BACKOFF,
    ):
        self.peers = peers.check()
        self.index = index
        self.n = len(peers.peers)
        config = (config or ServerConfig()).check()
        if config.propagation_mode == PropagationMode.SINGLE_ROUND_BUGGY:
            raise ConfigurationError("single-round propagation runs in the simulator only")
        self.store = store if store is not None else VersionedStore()
        server_cls = TccServer if config.tcc else CausalMeshServer
        self.server = server_cls(index, self.n, config, self.store)
        self.manager = manager
        self.retries = retries
        self.backoff = backoff
        self.trace: List[TraceEvent] = []
        self._started = time.monotonic()
        self._inbox: Optional[asyncio.Queue] = None
        self._outboxes: Dict[int, asyncio.Queue] = {}
        self._writers: List[asyncio.StreamWriter] = []
        self._inbound: Set[asyncio.StreamWriter] = set()
        self._tasks: Set[asyncio.Task] = set()
        self._listener: Optional[asyncio.AbstractServer] = None

    @property
    def address(self) -> PeerAddress:
        return self.peers.address(self.index)

    def _spawn(self, coro) -> asyncio.Task:
        task = asyncio.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        return task

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    async def listen(self) -> None:
        self._inbox = asyncio.Queue()
        # Outboxes exist before the links do; frames queue until connect_peers.
        self._outboxes = {p.server: asyncio.Queue() for p in self.peers.peers if p.server != self.index}
        self._listener = await asyncio.start_server(
            self._serve_connection, self.address.host, self.address.port
        )
        self._spawn(self._execute_loop())
        logger.info("S%d listening on %s:%d", self.index, self.address.host, self.address.port)

    async def connect_peers(self) -> None:
        """Open one outbound connection per peer; ConnectionError if one stays unreachable."""
        others = [p for p in self.peers.peers if p.server != self.index]
        writers = await asyncio.gather(*(self._connect(p) for p in others))
        for peer, writer in zip(others, writers):
            self._writers.append(writer)
            self._spawn(self._send_loop(peer.server, self._outboxes[peer.server], writer))

    async def start(self) -> None:
        await self.listen()
        await self.connect_peers()

    async def stop(self) -> None:
        if self._listener is not None:
            self._listener.close()
        for task in list(self._tasks):
            task.cancel()
        for writer in [*self._writers, *self._inbound]:
            writer.close()
        self._writers.clear()
        if self._listener is not None:
            # wait_closed also waits for open handler connections to finish.
            with contextlib.suppress(asyncio.TimeoutError):
                await asyncio.wait_for(self._listener.wait_closed(), timeout=1.0)

    async def _connect(self, peer: PeerAddress) -> asyncio.StreamWriter:
        delay = self.backoff
        for attempt in range(1, self.retries + 1):
            try:
                _, writer = await asyncio.open_connection(peer.host, peer.port)
                await write_frame(writer, PeerHello(server=self.index))
                logger.info("S%d connected to S%d", self.index, peer.server)
                return writer
            except OSError as e:
                logger.debug("S%d -> S%d attempt %d failed: %s", self.index, peer.server, attempt, e)
                await asyncio.sleep(delay)
                delay = min(delay * 2, MAX_BACKOFF)
        raise ConnectionError(
            f"S{peer.server} at {peer.host}:{peer.port} unreachable after {self.retries} attempts"
        )

    # ------------------------------------------------------------------
    # Connections
    # ------------------------------------------------------------------

    async def _serve_connection(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        remote = writer.get_extra_info("peername")
        loop = asyncio.get_running_loop()
        self._inbound.add(writer)
        try:
            while True:
                body = await read_frame(reader)
                if body is None:
                    break
                request = decode_request(body)
                if isinstance(request, PEER_MESSAGES):
                    await self._inbox.put((request, None))
                    continue
                future = loop.create_future()
                await self._inbox.put((request, future))
                await write_frame(writer, await future)
        except FrameDecodeError as e:
            logger.warning("S%d dropping connection from %s: %s", self.index, remote, e)
        except UnsatisfiableDependencyError as e:
            logger.error("S%d dropping client %s: %s", self.index, remote, e)
        except (ConnectionError, asyncio.IncompleteReadError):
            logger.debug("S%d connection from %s closed", self.index, remote)
        finally:
            self._inbound.discard(writer)
            writer.close()
            with contextlib.suppress(Exception):
                await writer.wait_closed()

    async def _send_loop(self, dst: int, queue: asyncio.Queue, writer: asyncio.StreamWriter) -> None:
        while True:
            message = await queue.get()
            try:
                await write_frame(writer, message)
            except ConnectionError as e:
                logger.error("S%d lost link to S%d: %s", self.index, dst, e)
                return

    # ------------------------------------------------------------------
    # Executor
    # ------------------------------------------------------------------

    async def _execute_loop(self) -> None:
        while True:
            request, future = await self._inbox.get()
            self.execute(request, future)

    def execute(self, request: Any, future: Optional[asyncio.Future] = None) -> None:
        try:
            result = self.server.handle(request)
        except UnsatisfiableDependencyError as e:
            logger.error("S%d: %s", self.index, e)
            self.record(EventKind.DIAGNOSTIC, key=e.key, vc=e.vc, detail=str(e))
            if future is not None and not future.done():
                future.set_exception(e)
            return
        except CausalMeshError as e:
            logger.error("S%d rejected %s: %s", self.index, type(request).__name__, e)
            if future is not None and not future.done():
                future.set_result(ErrorReply(error=type(e).__name__, detail=str(e)))
            return
        self._apply(result)
        if future is not None and not future.done():
            future.set_result(result.reply)

    def _apply(self, result: ActionResult) -> None:
        for version in result.store_writes:
            self.store.put(version)
        for kind, fields in result.events:
            self.record(kind, **fields)
        for dst, message in result.sends:
            self._outboxes[dst].put_nowait(message)

    def record(self, kind: EventKind, **fields: Any) -> TraceEvent:
        event = TraceEvent(
            seq=len(self.trace),
            time=int((time.monotonic() - self._started) * 1000),
            kind=kind,
            server=self.index,
            **fields,
        )
        self.trace.append(event)
        if self.manager is not None and self.manager.connections:
            self._spawn(self.manager.broadcast(event))
        return event

    def snapshot(self) -> ServerSnapshot:
        return self.server.snapshot()


async def serve(
    index: int,
    peers: PeerList,
    config: Optional[ServerConfig] = None,
    store: Optional[VersionedStore] = None,
    debug_port: Optional[int] = None,
) -> None:
    """Run one server until cancelled; with debug_port the debug app runs on the same loop."""
    from causalmesh.websocket.manager import manager

    process = ServerProcess(index, peers, config, store, manager=manager)
    await process.start()
    jobs = [process._listener.serve_forever()]
    if debug_port is not None:
        import uvicorn

        from causalmesh.main import create_app

        app = create_app(process)
        jobs.append(
            uvicorn.Server(
                uvicorn.Config(app, host=process.address.host, port=debug_port, log_level="warning")
            ).serve()
        )
    try:
        await asyncio.gather(*jobs)
    finally:
        await process.stop()


# ============================================================================
# CLIENT
# ============================================================================

class TcpCluster:
    """Blocking client connections, one per server, and the client-side trace."""

    def __init__(self, peers: PeerList, timeout: float = 10.0):
        self.peers = peers.check()
        self.timeout = timeout
        self.trace: List[TraceEvent] = []
        self._sockets: Dict[int, socket.socket] = {}
        self._started = time.monotonic()

    def _socket(self, index: int) -> socket.socket:
        sock = self._sockets.get(index)
        if sock is None:
            addr = self.peers.address(index)
            sock = socket.create_connection((addr.host, addr.port), timeout=self.timeout)
            self._sockets[index] = sock
        return sock

    def call(self, index: int, request: Any) -> Any:
        sock = self._socket(index)
        try:
            send_frame(sock, request)
            return decode_reply(recv_frame(sock))
        except (OSError, ConnectionError):
            self.drop(index)
            raise

    def record(self, kind: EventKind, **fields: Any) -> TraceEvent:
        event = TraceEvent(
            seq=len(self.trace),
            time=int((time.monotonic() - self._started) * 1000),
            kind=kind,
            **fields,
        )
        self.trace.append(event)
        return event

    def drop(self, index: int) -> None:
        sock = self._sockets.pop(index, None)
        if sock is not None:
            sock.close()

    def close(self) -> None:
        for index in list(self._sockets):
            self.drop(index)


class TcpHandle:
    def __init__(self, cluster: TcpCluster, index: int, workflow: Optional[str]):
        self.cluster = cluster
        self.index = index
        self.workflow = workflow

    def call(self, request: Any) -> Any:
        return self.cluster.call(self.index, request)

    def record(self, kind: EventKind, **fields: Any) -> None:
        self.cluster.record(kind, server=self.index, workflow=self.workflow, **fields)


class TcpScriptRunner(ScriptRunner):
    """
    Runs a scenario script against a live cluster. Steps that move simulated
    time become a pause of ``settle`` seconds; snapshots are not available.
    """

    def __init__(self, script: ScenarioScript, cluster: TcpCluster, settle: float = 0.2):
        super().__init__(script, lambda server, sess: TcpHandle(cluster, server, sess.workflow))
        self.cluster = cluster
        self.settle = settle

    def control(self, step: ScriptStep) -> bool:
        if step.kind in (StepKind.AWAIT_TAIL, StepKind.ADVANCE, StepKind.DRAIN):
            time.sleep(self.settle)
        elif step.kind == StepKind.SNAPSHOT:
            logger.info("script %s: snapshots are not taken over TCP", self.script.name)
        return True

    def run_step(self, step: ScriptStep) -> bool:
        try:
            return super().run_step(step)
        except OSError as e:
            self.cluster.record(
                EventKind.DIAGNOSTIC, server=step.server, session=step.session, key=step.key,
                detail=f"connection to S{step.server} lost: {e}",
            )
            logger.error("script %s: S%d dropped the connection: %s", self.script.name, step.server, e)
            return False


def run_client(script: ScenarioScript, peers: PeerList, settle: float = 0.2) -> List[TraceEvent]:
    if script.config.n != len(peers.peers):
        raise ConfigurationError(
            f"script {script.name} expects {script.config.n} servers, peer list has {len(peers.peers)}"
        )
    cluster = TcpCluster(peers)
    try:
        TcpScriptRunner(script, cluster, settle).run()
    finally:
        cluster.close()
    return cluster.trace


__all__ = [
    "ServerProcess",
    "TcpCluster",
    "TcpHandle",
    "TcpScriptRunner",
    "run_client",
    "serve",
]
