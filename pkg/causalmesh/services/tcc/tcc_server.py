"""
CausalMesh-TCC server: a multi-version C-cache (a bounded ring per key),
reads that pick the oldest version compatible with the transaction's read
set, and batch writes chained so that they integrate all-or-nothing.
"""

import logging
from collections import deque
from typing import Dict, Iterable, List, Mapping, Optional

from causalmesh.schemas.config import ServerConfig
from causalmesh.schemas.request import BatchItem, BatchWriteRequest, TccReadRequest
from causalmesh.schemas.response import BatchWriteReply, TccReadReply
from causalmesh.schemas.trace import ServerSnapshot
from causalmesh.services.cache.cut import VersionLookup, forms_cut, snapshot_forms_cut
from causalmesh.services.cache.dual_cache import TccCCache, integrate_tcc_in_place
from causalmesh.services.core.clocks import VectorClock, vc_leq
from causalmesh.services.core.versions import Deps, Key, Version, VersionedValue, deps_add
from causalmesh.services.server.state_machine import ActionResult, CausalMeshServer
from causalmesh.services.store.versioned_store import VersionedStore

logger = logging.getLogger(__name__)

ReadSet = Dict[Key, Version]


def compatible(
    readset: Mapping[Key, Version], candidate: Version, lookup: Optional[VersionLookup] = None
) -> bool:
    """Would readset plus candidate (and its deps) still be one causal cut?"""
    held = readset.get(candidate.key)
    if held is not None:
        return held.vc == candidate.vc
    return snapshot_forms_cut({**readset, candidate.key: candidate}, lookup)


def validate_parallel(
    readsets: Iterable[Mapping[Key, Version]],
    version_store: Optional[Mapping[Key, Deps]] = None,
) -> bool:
    """
    Check that the branches of a fan-out read from one cut. Two branches
    that read different versions of one key never do.

    Read-set entries carry their deps. ``version_store`` supplies deps for
    entries recorded without them (keyed by key).
    """
    versions: List[Version] = []
    seen = set()
    clocks: Dict[Key, VectorClock] = {}
    for readset in readsets:
        for key, v in readset.items():
            if clocks.setdefault(key, v.vc) != v.vc:
                return False
            if not v.deps and version_store is not None and key in version_store:
                v = v.model_copy(update={"deps": dict(version_store[key])})
            ident = (v.key, v.vc)
            if ident not in seen:
                seen.add(ident)
                versions.append(v)
    return forms_cut(versions)


class TccServer(CausalMeshServer):
    def __init__(
        self,
        server_id: int,
        n: int,
        config: Optional[ServerConfig] = None,
        store: Optional[VersionedStore] = None,
    ):
        config = (config or ServerConfig(tcc=True)).model_copy(update={"tcc": True})
        super().__init__(server_id, n, config, store)
        self.rings: TccCCache = {}
        self._handlers[TccReadRequest] = lambda r: self.handle_client_read_tcc(r.key, r.deps, r.readset)
        self._handlers[BatchWriteRequest] = lambda r: self.handle_batch_write(r.batch, r.deps, r.local)

    @property
    def capacity(self) -> int:
        return self.config.ring_capacity

    def _integrate(self, deps: Mapping[Key, VectorClock]) -> List[Version]:
        self.state.gvc, moved = integrate_tcc_in_place(
            self.state.cache.icache,
            self.rings,
            self.state.gvc,
            deps,
            self.capacity,
            server=self.id,
        )
        return moved

    def oldest_covering(self, key: Key, vc: VectorClock) -> Optional[Version]:
        for v in self.rings.get(key, ()):
            if vc_leq(vc, v.vc):
                return v
        return None

    def head(self, key: Key) -> Optional[Version]:
        ring = self.rings.get(key)
        return ring[-1] if ring else None

    def visible(self, key: Key) -> Optional[VersionedValue]:
        head = self.head(key)
        return head.as_value() if head is not None else None

    def seed(self, version: Version) -> None:
        self.rings[version.key] = deque([version], maxlen=self.capacity)

    def snapshot(self) -> ServerSnapshot:
        heads = {k: ring[-1] for k, ring in self.rings.items() if ring}
        return ServerSnapshot.model_construct(
            server=self.id,
            gvc=self.state.gvc,
            ccache={k: v.as_value() for k, v in heads.items()},
            recorded={k: dict(v.deps) for k, v in heads.items()},
            icache={k: list(vs) for k, vs in self.state.cache.icache.items()},
            rings={k: list(ring) for k, ring in self.rings.items()},
        )

    # ------------------------------------------------------------------

    def handle_client_read_tcc(
        self, key: Key, deps: Mapping[Key, VectorClock], readset: Mapping[Key, Version]
    ) -> ActionResult:
        self._integrate(deps)
        ring = self.rings.get(key)
        if not ring:
            return ActionResult(reply=TccReadReply(key=key, miss=True))
        for candidate in ring:
            if compatible(readset, candidate, self.oldest_covering):
                return ActionResult(reply=TccReadReply(key=key, version=candidate))
        logger.debug("S%d: no version of %s fits the read set (%d held)", self.id, key, len(ring))
        return ActionResult(reply=TccReadReply(key=key, aborted=True))

    def handle_batch_write(
        self, batch: List[BatchItem], deps: Mapping[Key, VectorClock], local: Mapping[Key, Version]
    ) -> ActionResult:
        running: Deps = dict(deps)
        for k, own in local.items():
            running = deps_add(running, k, own.vc)
        staged: List[Version] = []
        for item in batch:
            version = self._assign(item.key, item.value, running)
            staged.append(version)
            running = deps_add(running, item.key, version.vc)
        result = ActionResult(reply=BatchWriteReply(clocks=[v.vc for v in staged]))
        for version in staged:
            self._emit(version, result)
        return result
