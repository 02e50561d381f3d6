"""
Client library used by workflow functions.

Every call goes through a ServerHandle: something that can deliver one
request to one server and return its reply, and that records the session's
view of each operation into the trace. The simulator and the TCP client both
provide one.
"""

import logging
from typing import Any, List, Optional, Protocol, Type, TypeVar

from causalmesh.errors import NotFoundError, ProtocolInvariantError, TransactionAborted
from causalmesh.schemas.request import (
    BatchItem,
    BatchWriteRequest,
    ClientReadRequest,
    ClientReadTxnRequest,
    ClientWriteRequest,
    MissFetchRequest,
    TccReadRequest,
)
from causalmesh.schemas.response import (
    BatchWriteReply,
    ErrorReply,
    MissFetchReply,
    ReadReply,
    ReadTxnReply,
    TccReadReply,
    WriteReply,
)
from causalmesh.schemas.trace import EventKind, TraceItem
from causalmesh.services.client.session import ClientSession, TccSession
from causalmesh.services.core.clocks import vc_leq
from causalmesh.services.core.versions import Key, Version, VersionedValue, deps_add, resolve

logger = logging.getLogger(__name__)

R = TypeVar("R")


class ServerHandle(Protocol):
    index: int

    def call(self, request: Any) -> Any:
        ...

    def record(self, kind: EventKind, **fields: Any) -> None:
        ...


def expect_reply(reply: Any, cls: Type[R]) -> R:
    if isinstance(reply, cls):
        return reply
    if isinstance(reply, ErrorReply):
        raise ProtocolInvariantError(f"server error {reply.error}: {reply.detail}")
    raise ProtocolInvariantError(f"expected {cls.__name__}, got {type(reply).__name__}")


def _as_version(key: Key, value: VersionedValue, deps=None) -> Version:
    return Version(
        key=key, value=value.value, vc=value.vc, deps=deps or {}, origin_vc=value.origin_vc
    )


def _keep_local(sess: ClientSession, version: Version) -> Version:
    own = sess.local.get(version.key)
    merged = version if own is None else resolve(own, version)
    sess.local[version.key] = merged
    return merged


# ============================================================================
# CC+ OPERATIONS
# ============================================================================

def _miss(sess: ClientSession, server: ServerHandle, key: Key) -> Version:
    """Fetch through the miss path; the result goes to local, never to deps."""
    request = MissFetchRequest(key=key, session=sess.session_id)
    fetch = expect_reply(server.call(request), MissFetchReply)
    if not fetch.found:
        server.record(EventKind.MISS_FETCH, session=sess.session_id, key=key, found=False)
        own = sess.local.get(key)
        if own is None:
            raise NotFoundError(key)
        return own
    fetched = _as_version(key, fetch.value)
    server.record(
        EventKind.MISS_FETCH,
        session=sess.session_id,
        key=key,
        vc=fetched.vc,
        value=fetched.value,
        found=True,
        detail="store" if fetch.store_read else "icache",
    )
    return _keep_local(sess, fetched)


def client_read(sess: ClientSession, server: ServerHandle, key: Key) -> bytes:
    server.record(EventKind.CLIENT_READ_REQ, session=sess.session_id, key=key, deps=dict(sess.deps))
    reply = expect_reply(
        server.call(ClientReadRequest(key=key, deps=sess.deps, session=sess.session_id)), ReadReply
    )
    if reply.miss:
        try:
            observed = _miss(sess, server, key)
        except NotFoundError:
            server.record(EventKind.CLIENT_READ_REPLY, session=sess.session_id, key=key, found=False)
            raise
        server.record(
            EventKind.CLIENT_READ_REPLY,
            session=sess.session_id,
            key=key,
            observed_vc=observed.vc,
            value=observed.value,
            found=True,
            detail="miss",
        )
        return observed.value

    returned = reply.value
    sess.deps = deps_add(sess.deps, key, returned.vc)
    own = sess.local.get(key)
    observed = returned if own is None else resolve(own.as_value(), returned)
    server.record(
        EventKind.CLIENT_READ_REPLY,
        session=sess.session_id,
        key=key,
        vc=returned.vc,
        observed_vc=observed.vc,
        value=observed.value,
        found=True,
    )
    return observed.value


def client_write(sess: ClientSession, server: ServerHandle, key: Key, value: bytes) -> None:
    server.record(
        EventKind.CLIENT_WRITE_REQ, session=sess.session_id, key=key, value=value, deps=dict(sess.deps)
    )
    request = ClientWriteRequest(
        key=key, value=value, deps=sess.deps, local=sess.local, session=sess.session_id
    )
    reply = expect_reply(server.call(request), WriteReply)
    _keep_local(sess, Version(key=key, value=value, vc=reply.vc, deps=dict(sess.deps)))
    server.record(
        EventKind.CLIENT_WRITE_REPLY, session=sess.session_id, key=key, value=value, vc=reply.vc
    )


def client_read_txn(
    sess: ClientSession, server: ServerHandle, keys: List[Key]
) -> List[Optional[bytes]]:
    """
    Read several keys from one causal cut. Raises TransactionAborted when a
    key the session wrote comes back older than the session's own write.
    Keys that exist nowhere read as None.
    """
    server.record(
        EventKind.READ_TXN_REQ,
        session=sess.session_id,
        deps=dict(sess.deps),
        items=[TraceItem(key=k) for k in keys],
    )
    reply = expect_reply(
        server.call(ClientReadTxnRequest(keys=keys, deps=sess.deps, session=sess.session_id)),
        ReadTxnReply,
    )
    for item in reply.items:
        own = sess.local.get(item.key)
        if item.fetched or item.value is None or own is None:
            continue
        if not vc_leq(own.vc, item.value.vc):
            server.record(
                EventKind.ABORT,
                session=sess.session_id,
                key=item.key,
                vc=item.value.vc,
                observed_vc=own.vc,
                detail="read_txn",
            )
            raise TransactionAborted("own write newer than the transaction's cut", key=item.key)

    values: List[Optional[bytes]] = []
    traced: List[TraceItem] = []
    for item in reply.items:
        if item.value is None:
            own = sess.local.get(item.key)
            values.append(own.value if own is not None else None)
            traced.append(TraceItem(key=item.key, vc=own.vc if own else None,
                                    value=own.value if own else None, fetched=True))
            continue
        if item.fetched:
            observed = _keep_local(sess, _as_version(item.key, item.value))
            values.append(observed.value)
            traced.append(TraceItem(key=item.key, vc=observed.vc, value=observed.value, fetched=True))
            continue
        sess.deps = deps_add(sess.deps, item.key, item.value.vc)
        values.append(item.value.value)
        traced.append(TraceItem(key=item.key, vc=item.value.vc, value=item.value.value))
    server.record(EventKind.READ_TXN_REPLY, session=sess.session_id, items=traced)
    return values


# ============================================================================
# TCC OPERATIONS
# ============================================================================

def tcc_write(sess: TccSession, key: Key, value: bytes) -> None:
    sess.write_buffer.append(BatchItem(key=key, value=value))


def tcc_read(sess: TccSession, server: ServerHandle, key: Key) -> Optional[bytes]:
    buffered = sess.buffered(key)
    if buffered is not None:
        return buffered
    held = sess.readset.get(key)
    if held is not None:
        return held.value

    server.record(EventKind.TCC_READ_REQ, session=sess.session_id, key=key, deps=dict(sess.deps))
    request = TccReadRequest(key=key, deps=sess.deps, readset=sess.readset, session=sess.session_id)
    reply = expect_reply(server.call(request), TccReadReply)
    if reply.aborted:
        server.record(EventKind.ABORT, session=sess.session_id, key=key, detail="tcc_read")
        raise TransactionAborted("no buffered version fits the read set", key=key)
    if reply.miss:
        try:
            version = _miss(sess, server, key)
        except NotFoundError:
            server.record(EventKind.TCC_READ_REPLY, session=sess.session_id, key=key, found=False)
            return None
        sess.readset[key] = version
        server.record(
            EventKind.TCC_READ_REPLY,
            session=sess.session_id,
            key=key,
            observed_vc=version.vc,
            value=version.value,
            deps={},
            found=True,
            detail="miss",
        )
        return version.value

    version = reply.version
    sess.readset[key] = version
    sess.deps = deps_add(sess.deps, key, version.vc)
    server.record(
        EventKind.TCC_READ_REPLY,
        session=sess.session_id,
        key=key,
        vc=version.vc,
        observed_vc=version.vc,
        value=version.value,
        deps=dict(version.deps),
        found=True,
    )
    return version.value


def tcc_commit(sess: TccSession, server: ServerHandle) -> None:
    if not sess.write_buffer:
        return
    batch = list(sess.write_buffer)
    request = BatchWriteRequest(batch=batch, deps=sess.deps, local=sess.local, session=sess.session_id)
    reply = expect_reply(server.call(request), BatchWriteReply)
    if len(reply.clocks) != len(batch):
        raise ProtocolInvariantError(f"batch of {len(batch)} got {len(reply.clocks)} clocks")
    for item, vc in zip(batch, reply.clocks):
        _keep_local(sess, Version(key=item.key, value=item.value, vc=vc))
    server.record(
        EventKind.BATCH_COMMIT,
        session=sess.session_id,
        items=[TraceItem(key=item.key, vc=vc, value=item.value) for item, vc in zip(batch, reply.clocks)],
    )
    sess.write_buffer = []
