import asyncio
import socket
import threading
import time

import pytest

from causalmesh.errors import ConfigurationError
from causalmesh.schemas.config import PeerAddress, PeerList, PropagationMode, ServerConfig
from causalmesh.schemas.request import ClientReadRequest, ClientWriteRequest
from causalmesh.schemas.response import ReadReply, WriteReply
from causalmesh.schemas.trace import EventKind
from causalmesh.services.checker.report import check_trace
from causalmesh.services.network.framing import HEADER, MAX_FRAME
from causalmesh.services.network.runner import ServerProcess, TcpCluster, run_client
from causalmesh.services.sim.scenarios import load_scenario, run_script


def free_peers(n):
    socks = [socket.socket() for _ in range(n)]
    try:
        for s in socks:
            s.bind(("127.0.0.1", 0))
        ports = [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()
    return PeerList(peers=[PeerAddress(server=i, host="127.0.0.1", port=p) for i, p in enumerate(ports)])


class ClusterThread:
    """ServerProcesses on one background event loop."""

    def __init__(self, peers, config=None):
        self.peers = peers
        self.loop = asyncio.new_event_loop()
        self.thread = threading.Thread(target=self.loop.run_forever, daemon=True)
        self.processes = [
            ServerProcess(i, peers, config, retries=50, backoff=0.02) for i in range(len(peers.peers))
        ]

    def _run(self, coro):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout=15)

    def start(self):
        self.thread.start()

        async def boot():
            for p in self.processes:
                await p.listen()
            await asyncio.gather(*(p.connect_peers() for p in self.processes))

        self._run(boot())

    def stop(self):
        async def halt():
            for p in self.processes:
                await p.stop()

        self._run(halt())
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.thread.join(timeout=5)


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.02)
    return False


@pytest.fixture
def tcp_cluster():
    cluster = ClusterThread(free_peers(3))
    cluster.start()
    yield cluster
    cluster.stop()


def tail_integrated(process, key):
    return any(e.kind == EventKind.TAIL_INTEGRATE and e.key == key for e in process.trace)


def test_write_reaches_its_tail(tcp_cluster):
    client = TcpCluster(tcp_cluster.peers)
    try:
        reply = client.call(0, ClientWriteRequest(key="x", value=b"x0"))
        assert isinstance(reply, WriteReply) and reply.vc == (1, 0, 0)
        tail = tcp_cluster.processes[2]
        assert wait_for(lambda: tail_integrated(tail, "x"))
        read = client.call(2, ClientReadRequest(key="x"))
        assert isinstance(read, ReadReply)
        assert read.value.value == b"x0"
        assert tail.snapshot().ccache["x"].vc == (1, 0, 0)
    finally:
        client.close()


CLIENT_REPLIES = (EventKind.CLIENT_WRITE_REPLY, EventKind.CLIENT_READ_REPLY)


def client_view(trace):
    return [(e.kind, e.session, e.key, e.value, e.vc) for e in trace if e.kind in CLIENT_REPLIES]


def test_roaming_script_over_tcp(tcp_cluster):
    script = load_scenario("roaming", mode=PropagationMode.TWO_ROUND)
    trace = run_client(script, tcp_cluster.peers, settle=0.3)
    reads = {
        (e.session, e.key): e.value for e in trace if e.kind == EventKind.CLIENT_READ_REPLY
    }
    assert reads == {("c2", "y"): b"y0", ("c2", "x"): b"x0"}
    report = check_trace(trace)
    assert report.clean, report.summary()
    assert not any(e.kind == EventKind.DIAGNOSTIC for e in trace)
    assert client_view(trace) == client_view(run_script(script).trace)


def test_run_client_checks_cluster_size(tcp_cluster):
    script = load_scenario("roaming")
    peers = PeerList(peers=tcp_cluster.peers.peers[:2])
    with pytest.raises(ConfigurationError):
        run_client(script, peers)


def _raw(peers, index, payload):
    addr = peers.address(index)
    with socket.create_connection((addr.host, addr.port), timeout=5) as sock:
        sock.sendall(payload)
        try:
            return sock.recv(16)
        except ConnectionResetError:
            return b""


@pytest.mark.parametrize(
    "payload",
    [HEADER.pack(MAX_FRAME + 1), HEADER.pack(5) + b"{oops", HEADER.pack(2) + b"{}"],
)
def test_bad_frames_drop_the_connection(tcp_cluster, payload):
    assert _raw(tcp_cluster.peers, 0, payload) == b""
    client = TcpCluster(tcp_cluster.peers)
    try:
        assert isinstance(client.call(0, ClientReadRequest(key="x")), ReadReply)
    finally:
        client.close()


def test_unsatisfiable_read_drops_client(tcp_cluster):
    client = TcpCluster(tcp_cluster.peers)
    try:
        with pytest.raises(ConnectionError):
            client.call(1, ClientReadRequest(key="x", deps={"x": (3, 0, 0)}))
    finally:
        client.close()
    process = tcp_cluster.processes[1]
    assert wait_for(lambda: any(e.kind == EventKind.DIAGNOSTIC for e in process.trace))


def test_single_round_mode_is_simulator_only():
    with pytest.raises(ConfigurationError):
        ServerProcess(0, free_peers(2), ServerConfig(propagation_mode=PropagationMode.SINGLE_ROUND_BUGGY))
