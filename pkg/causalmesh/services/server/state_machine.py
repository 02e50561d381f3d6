"""
Per-server CausalMesh state machine.

Handlers never block and never wait for replies: each one runs against local
state only and returns an ActionResult listing the reply, the messages to
send, the write-through records for the store and the protocol events worth
tracing. The same machine drives the simulator and the TCP runner; the
harness decides how the effects are delivered.

Propagation follows a two-round chain. A write assigned at server o travels
o+1, o+2, ... for hops 0..2n-2; hops below n-1 insert the version into the
receiver's I-cache, later hops only forward, and the receiver of hop 2n-2
(o's predecessor on the second round) is the tail, which integrates it.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from causalmesh.errors import ConfigurationError, NotFoundError, ProtocolInvariantError
from causalmesh.schemas.config import PropagationMode, ServerConfig
from causalmesh.schemas.request import (
    ClientReadRequest,
    ClientReadTxnRequest,
    ClientWriteRequest,
    IntegrateHint,
    MissFetchRequest,
    PeerHello,
    PeerMessage,
    PropagateMsg,
)
from causalmesh.schemas.response import (
    MissFetchReply,
    ReadReply,
    ReadTxnReply,
    Reply,
    TxnItem,
    WriteReply,
)
from causalmesh.schemas.trace import EventKind, ServerSnapshot
from causalmesh.services.cache.dual_cache import DualCache, icache_latest
from causalmesh.services.core.clocks import VectorClock, vc_increment, vc_merge, zero_clock
from causalmesh.services.core.versions import Deps, Key, Version, VersionedValue, WireBytes, deps_add
from causalmesh.services.store.versioned_store import VersionedStore

logger = logging.getLogger(__name__)

ServerEvent = Tuple[EventKind, Dict[str, Any]]


def chain_of(origin: int, n: int) -> List[int]:
    """Servers visited by a write assigned at origin, origin first; length 2n."""
    if n < 1:
        raise ConfigurationError(f"cluster size must be >= 1, got {n}")
    return [(origin + i) % n for i in range(2 * n)]


def tail_hop(n: int, mode: PropagationMode) -> int:
    if mode == PropagationMode.SINGLE_ROUND_BUGGY:
        return n - 2
    return 2 * n - 2


@dataclass
class ActionResult:
    reply: Optional[Reply] = None
    sends: List[Tuple[int, PeerMessage]] = field(default_factory=list)
    store_writes: List[Version] = field(default_factory=list)
    events: List[ServerEvent] = field(default_factory=list)

    def event(self, kind: EventKind, **fields: Any) -> None:
        self.events.append((kind, fields))


@dataclass
class ServerState:
    id: int
    n: int
    gvc: VectorClock
    config: ServerConfig
    cache: DualCache = field(default_factory=DualCache)
    originated: int = 0

    @property
    def ccache(self):
        return self.cache.ccache

    @property
    def icache(self):
        return self.cache.icache

    @property
    def rdi(self):
        return self.cache.rdi


class CausalMeshServer:
    """One server of the chain. Call ``handle`` with any request or peer message."""

    def __init__(
        self,
        server_id: int,
        n: int,
        config: Optional[ServerConfig] = None,
        store: Optional[VersionedStore] = None,
    ):
        config = (config or ServerConfig()).check()
        if not 0 <= server_id < n:
            raise ConfigurationError(f"server index {server_id} out of range for n={n}")
        self.state = ServerState(id=server_id, n=n, gvc=zero_clock(n), config=config)
        self.store = store
        self._handlers: Dict[type, Callable[[Any], ActionResult]] = {
            ClientReadRequest: lambda r: self.handle_client_read(r.key, r.deps),
            ClientWriteRequest: lambda r: self.handle_client_write(r.key, r.value, r.deps, r.local),
            ClientReadTxnRequest: lambda r: self.handle_client_read_txn(r.keys, r.deps),
            MissFetchRequest: lambda r: self.miss_fetch(r.key),
            PropagateMsg: self.handle_server_write,
            IntegrateHint: self.handle_integrate_hint,
            PeerHello: lambda r: ActionResult(),
        }

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------

    @property
    def id(self) -> int:
        return self.state.id

    @property
    def n(self) -> int:
        return self.state.n

    @property
    def gvc(self) -> VectorClock:
        return self.state.gvc

    @property
    def config(self) -> ServerConfig:
        return self.state.config

    @property
    def successor(self) -> int:
        return (self.state.id + 1) % self.state.n

    # ------------------------------------------------------------------
    # Dispatch
    # ------------------------------------------------------------------

    def handle(self, request: Any) -> ActionResult:
        handler = self._handlers.get(type(request))
        if handler is None:
            raise ProtocolInvariantError(f"S{self.id} cannot handle {type(request).__name__}")
        return handler(request)

    # ------------------------------------------------------------------
    # Cache hooks (overridden by the TCC server)
    # ------------------------------------------------------------------

    def _integrate(self, deps: Mapping[Key, VectorClock]) -> List[Version]:
        self.state.gvc, moved = self.state.cache.integrate(
            self.state.gvc,
            deps,
            implicit_same_key=self.config.implicit_same_key,
            server=self.id,
        )
        return moved

    def visible(self, key: Key) -> Optional[VersionedValue]:
        return self.state.cache.ccache.get(key)

    def seed(self, version: Version) -> None:
        """Place a version directly in the C-cache (warm start)."""
        self.state.cache.ccache[version.key] = version.as_value()
        self.state.cache.rdi.record(version.key, version.deps)

    def snapshot(self) -> ServerSnapshot:
        cache = self.state.cache
        return ServerSnapshot.model_construct(
            server=self.id,
            gvc=self.state.gvc,
            ccache=dict(cache.ccache),
            recorded={k: cache.rdi.recorded.get(k, {}) for k in cache.ccache},
            icache={k: list(vs) for k, vs in cache.icache.items()},
            rings=None,
        )

    # ------------------------------------------------------------------
    # Write path
    # ------------------------------------------------------------------

    def _assign(self, key: Key, value: bytes, deps: Deps) -> Version:
        gvc = self.state.gvc
        for vc in deps.values():
            gvc = vc_merge(gvc, vc)
        gvc = vc_increment(gvc, self.id)
        self.state.gvc = gvc
        self.state.originated += 1
        return Version(key=key, value=value, vc=gvc, deps=deps)

    def _emit(self, version: Version, result: ActionResult) -> None:
        """Insert a freshly assigned version locally and start its chain."""
        self.state.cache.insert(version)
        result.store_writes.append(version)
        if self.n == 1:
            self._tail_integrate(PropagateMsg(origin=self.id, hop=0, version=version), result)
        else:
            result.sends.append(
                (self.successor, PropagateMsg(origin=self.id, hop=0, version=version))
            )

    def handle_client_write(
        self,
        key: Key,
        value: WireBytes,
        deps: Mapping[Key, VectorClock],
        local: Mapping[Key, Version],
    ) -> ActionResult:
        merged: Deps = dict(deps)
        for k, own in local.items():
            merged = deps_add(merged, k, own.vc)
        version = self._assign(key, value, merged)
        result = ActionResult(reply=WriteReply(key=key, vc=version.vc))
        self._emit(version, result)
        return result

    def handle_server_write(self, msg: PropagateMsg) -> ActionResult:
        n = self.n
        last = tail_hop(n, self.config.propagation_mode)
        if not 0 <= msg.hop <= last:
            raise ProtocolInvariantError(f"hop {msg.hop} out of range at S{self.id} (n={n})")
        expected = (msg.origin + msg.hop + 1) % n
        if expected != self.id:
            raise ProtocolInvariantError(
                f"hop {msg.hop} from S{msg.origin} delivered to S{self.id}, expected S{expected}"
            )

        result = ActionResult()
        if msg.hop == last:
            self._tail_integrate(msg, result)
            return result
        if msg.hop <= n - 2:
            self.state.cache.insert(msg.version)
        result.sends.append((self.successor, msg.model_copy(update={"hop": msg.hop + 1})))
        return result

    def _tail_integrate(self, msg: PropagateMsg, result: ActionResult) -> None:
        v = msg.version
        self.state.gvc = vc_merge(self.state.gvc, v.vc)
        self.state.cache.insert(v)
        self._integrate(deps_add(v.deps, v.key, v.vc))
        result.event(EventKind.TAIL_INTEGRATE, key=v.key, vc=v.vc, origin=msg.origin, hop=msg.hop)
        logger.debug("S%d tail-integrated %s", self.id, v.short())
        if self.config.tail_disseminate:
            hint = IntegrateHint(origin=self.id, key=v.key, vc=v.vc)
            for j in range(self.n):
                if j != self.id:
                    result.sends.append((j, hint))

    def handle_integrate_hint(self, hint: IntegrateHint) -> ActionResult:
        self._integrate({hint.key: hint.vc})
        result = ActionResult()
        result.event(EventKind.INTEGRATE_HINT, key=hint.key, vc=hint.vc, origin=hint.origin)
        return result

    # ------------------------------------------------------------------
    # Read path
    # ------------------------------------------------------------------

    def handle_client_read(self, key: Key, deps: Mapping[Key, VectorClock]) -> ActionResult:
        self._integrate(deps)
        entry = self.visible(key)
        return ActionResult(reply=ReadReply(key=key, value=entry, miss=entry is None))

    def _fetch(self, key: Key, result: ActionResult) -> Tuple[Optional[VersionedValue], bool]:
        """Miss path body: (value, store_read). Value is None when the key exists nowhere."""
        entry = self.visible(key)
        if entry is not None:
            return entry, False
        pending = icache_latest(self.state.cache.icache, key)
        if pending is not None:
            return pending.as_value(), False
        if self.store is None:
            return None, False
        try:
            stored = self.store.get(key)
        except NotFoundError:
            return None, True
        version = self._assign(key, stored.value, {})
        self._emit(version, result)
        logger.debug("S%d miss on %s filled from store as %s", self.id, key, version.short())
        return version.as_value(), True

    def miss_fetch(self, key: Key) -> ActionResult:
        result = ActionResult()
        value, store_read = self._fetch(key, result)
        result.reply = MissFetchReply(
            key=key, value=value, found=value is not None, store_read=store_read
        )
        return result

    def handle_client_read_txn(self, keys: List[Key], deps: Mapping[Key, VectorClock]) -> ActionResult:
        self._integrate(deps)
        result = ActionResult()
        fetched: Dict[Key, Optional[VersionedValue]] = {}
        for key in keys:
            if self.visible(key) is None and key not in fetched:
                fetched[key], _ = self._fetch(key, result)
        items = []
        for key in keys:
            entry = self.visible(key)
            if entry is not None:
                items.append(TxnItem(key=key, value=entry))
            else:
                items.append(TxnItem(key=key, value=fetched.get(key), fetched=True))
        result.reply = ReadTxnReply(items=items)
        return result
