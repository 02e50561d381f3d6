import os
import sys
from collections import deque
from typing import Any, List, Optional

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from causalmesh.schemas.config import ServerConfig  # noqa: E402
from causalmesh.schemas.trace import EventKind, TraceEvent  # noqa: E402
from causalmesh.services.server.state_machine import CausalMeshServer  # noqa: E402
from causalmesh.services.store.versioned_store import VersionedStore  # noqa: E402
from causalmesh.services.tcc.tcc_server import TccServer  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size sweeps, deselect with -m 'not slow'")


class LocalCluster:
    """
    Servers wired together by hand. Messages wait in one FIFO queue until
    ``step`` or ``drain`` delivers them, which keeps every channel in order.
    """

    def __init__(self, n: int, config: Optional[ServerConfig] = None, tcc: bool = False):
        self.store = VersionedStore()
        cls = TccServer if tcc else CausalMeshServer
        self.servers = [cls(i, n, config, self.store) for i in range(n)]
        self.pending: deque = deque()
        self.trace: List[TraceEvent] = []

    def call(self, index: int, request: Any) -> Any:
        result = self.servers[index].handle(request)
        for version in result.store_writes:
            self.store.put(version)
        for kind, fields in result.events:
            self.record(kind, server=index, **fields)
        for dst, msg in result.sends:
            self.pending.append((dst, msg))
        return result.reply

    def step(self) -> None:
        dst, msg = self.pending.popleft()
        self.call(dst, msg)

    def drain(self) -> int:
        steps = 0
        while self.pending:
            self.step()
            steps += 1
        return steps

    def record(self, kind: EventKind, **fields: Any) -> None:
        self.trace.append(TraceEvent(seq=len(self.trace), time=len(self.trace), kind=kind, **fields))

    def handle(self, index: int, workflow: str = "wf") -> "LocalHandle":
        return LocalHandle(self, index, workflow)


class LocalHandle:
    def __init__(self, cluster: LocalCluster, index: int, workflow: str):
        self.cluster = cluster
        self.index = index
        self.workflow = workflow

    def call(self, request: Any) -> Any:
        return self.cluster.call(self.index, request)

    def record(self, kind: EventKind, **fields: Any) -> None:
        self.cluster.record(kind, server=self.index, workflow=self.workflow, **fields)


@pytest.fixture
def cluster3():
    return LocalCluster(3)


@pytest.fixture
def tcc_cluster3():
    return LocalCluster(3, ServerConfig(tcc=True, ring_capacity=2), tcc=True)
