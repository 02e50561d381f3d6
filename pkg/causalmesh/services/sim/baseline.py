"""
Eventually consistent baseline.

Each server keeps a plain last-writer map and replicates writes straight to
every peer with no causal metadata. Clients carry nothing between functions.
It exists to produce anomalous traces for the checker and the anomaly-rate
experiment.
"""

import logging
from typing import Dict, List, Optional, Sequence

from causalmesh.errors import ConfigurationError, NotFoundError, ProtocolInvariantError
from causalmesh.schemas.config import BaselineMode, SimConfig
from causalmesh.schemas.request import (
    ClientReadRequest,
    ClientReadTxnRequest,
    ClientWriteRequest,
    MissFetchRequest,
    PeerHello,
    ReplicateMsg,
)
from causalmesh.schemas.response import MissFetchReply, ReadReply, ReadTxnReply, TxnItem, WriteReply
from causalmesh.schemas.trace import EventKind, ServerSnapshot, TraceEvent
from causalmesh.services.client.library import ServerHandle, expect_reply
from causalmesh.services.client.session import ClientSession
from causalmesh.services.core.clocks import vc_increment, vc_merge, zero_clock
from causalmesh.services.core.versions import Key, Version, VersionedValue, resolve
from causalmesh.services.server.state_machine import ActionResult
from causalmesh.services.sim.workflow import WorkflowDag
from causalmesh.services.store.versioned_store import VersionedStore

logger = logging.getLogger(__name__)


class EventualServer:
    def __init__(self, server_id: int, n: int, store: Optional[VersionedStore] = None):
        self.id = server_id
        self.n = n
        self.gvc = zero_clock(n)
        self.data: Dict[Key, VersionedValue] = {}
        self.store = store

    def _apply(self, version: VersionedValue, key: Key) -> None:
        existing = self.data.get(key)
        self.data[key] = version if existing is None else resolve(existing, version)

    def handle(self, request) -> ActionResult:
        if isinstance(request, ClientReadRequest):
            entry = self.data.get(request.key)
            return ActionResult(reply=ReadReply(key=request.key, value=entry, miss=entry is None))
        if isinstance(request, ClientWriteRequest):
            self.gvc = vc_increment(self.gvc, self.id)
            version = Version(key=request.key, value=request.value, vc=self.gvc)
            self._apply(version.as_value(), version.key)
            result = ActionResult(reply=WriteReply(key=version.key, vc=version.vc))
            result.store_writes.append(version)
            msg = ReplicateMsg(origin=self.id, version=version)
            result.sends.extend((j, msg) for j in range(self.n) if j != self.id)
            return result
        if isinstance(request, ReplicateMsg):
            v = request.version
            self.gvc = vc_merge(self.gvc, v.vc)
            self._apply(v.as_value(), v.key)
            return ActionResult()
        if isinstance(request, MissFetchRequest):
            return ActionResult(reply=self._fetch(request.key))
        if isinstance(request, ClientReadTxnRequest):
            items = [TxnItem(key=k, value=self.data.get(k)) for k in request.keys]
            return ActionResult(reply=ReadTxnReply(items=items))
        if isinstance(request, PeerHello):
            return ActionResult()
        raise ProtocolInvariantError(f"baseline S{self.id} cannot handle {type(request).__name__}")

    def _fetch(self, key: Key) -> MissFetchReply:
        if self.store is None:
            return MissFetchReply(key=key, found=False)
        try:
            stored = self.store.get(key)
        except NotFoundError:
            return MissFetchReply(key=key, found=False, store_read=True)
        self._apply(stored.as_value(), key)
        return MissFetchReply(key=key, value=self.data[key], store_read=True)

    def seed(self, version: Version) -> None:
        self.data[version.key] = version.as_value()

    def visible(self, key: Key) -> Optional[VersionedValue]:
        return self.data.get(key)

    def snapshot(self) -> ServerSnapshot:
        return ServerSnapshot.model_construct(
            server=self.id, gvc=self.gvc, ccache=dict(self.data), recorded={}, icache={}, rings=None
        )


# ============================================================================
# CLIENT (no causal metadata)
# ============================================================================

def baseline_read(sess: ClientSession, server: ServerHandle, key: Key) -> bytes:
    server.record(EventKind.CLIENT_READ_REQ, session=sess.session_id, key=key, deps={})
    reply = expect_reply(server.call(ClientReadRequest(key=key, session=sess.session_id)), ReadReply)
    value = reply.value
    if reply.miss:
        request = MissFetchRequest(key=key, session=sess.session_id)
        fetch = expect_reply(server.call(request), MissFetchReply)
        value = fetch.value if fetch.found else None
    if value is None:
        server.record(EventKind.CLIENT_READ_REPLY, session=sess.session_id, key=key, found=False)
        raise NotFoundError(key)
    server.record(
        EventKind.CLIENT_READ_REPLY,
        session=sess.session_id,
        key=key,
        vc=value.vc,
        observed_vc=value.vc,
        value=value.value,
        found=True,
    )
    return value.value


def baseline_write(sess: ClientSession, server: ServerHandle, key: Key, value: bytes) -> None:
    server.record(EventKind.CLIENT_WRITE_REQ, session=sess.session_id, key=key, value=value, deps={})
    reply = expect_reply(
        server.call(ClientWriteRequest(key=key, value=value, session=sess.session_id)), WriteReply
    )
    server.record(EventKind.CLIENT_WRITE_REPLY, session=sess.session_id, key=key, value=value, vc=reply.vc)


def baseline_read_txn(sess: ClientSession, server: ServerHandle, keys: List[Key]) -> List[Optional[bytes]]:
    values: List[Optional[bytes]] = []
    for key in keys:
        try:
            values.append(baseline_read(sess, server, key))
        except NotFoundError:
            values.append(None)
    return values


def run_baseline(config: SimConfig, workflows: Sequence[WorkflowDag]) -> List[TraceEvent]:
    from causalmesh.services.sim.simulator import sim_run

    if config.baseline_mode != BaselineMode.EVENTUAL_BASELINE:
        raise ConfigurationError("run_baseline needs baseline_mode=eventual_baseline")
    return sim_run(config, workflows).trace
