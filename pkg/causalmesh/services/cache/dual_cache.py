"""
Dual cache: the C-cache (visible, one version per key) and the I-cache
(not yet safe to reveal, many versions per key with their dependencies),
plus dependency integration between them.

Integration is purely local. For a dependency (k, d) it pulls every I-cache
version of k whose clock is <= d, recursively follows the pulled versions'
dependencies, and folds everything into the C-cache with `resolve`. A
dependency is satisfied when the C-cache clock merged with the pulled clocks
dominates d. When neither holds anything at or below d, the oldest I-cache
versions newer than d are pulled in its place.
"""

import copy
import logging
from collections import deque
from dataclasses import dataclass, field
from collections.abc import Mapping
from typing import Deque, Dict, List, Optional, Set, Tuple

from causalmesh.errors import UnsatisfiableDependencyError
from causalmesh.services.core.clocks import VectorClock, vc_leq, vc_less, vc_merge
from causalmesh.services.core.versions import (
    Deps,
    Key,
    Version,
    VersionedValue,
    deps_merge,
    resolve_all,
)

logger = logging.getLogger(__name__)

CCache = Dict[Key, VersionedValue]
ICache = Dict[Key, List[Version]]
TccCCache = Dict[Key, Deque[Version]]
Closure = Dict[Key, Set[VectorClock]]


@dataclass
class ReverseDepIndex:
    """Which keys named a key as a dependency when they were integrated."""

    dependents: Dict[Key, Set[Key]] = field(default_factory=dict)
    # Merged deps of every version folded into each C-cache key
    recorded: Dict[Key, Deps] = field(default_factory=dict)

    def record(self, key: Key, deps: Mapping[Key, VectorClock]) -> None:
        if deps:
            self.recorded[key] = deps_merge(self.recorded.get(key, {}), deps)
        else:
            self.recorded.setdefault(key, {})
        for dep_key in deps:
            if dep_key != key:
                self.dependents.setdefault(dep_key, set()).add(key)

    def reachable(self, key: Key) -> Set[Key]:
        """key plus every key transitively depending on it."""
        out = {key}
        work = [key]
        while work:
            k = work.pop()
            for dependent in self.dependents.get(k, ()):
                if dependent not in out:
                    out.add(dependent)
                    work.append(dependent)
        return out


class RingHeads(Mapping):
    """Read-only view of the newest entry of every TCC ring."""

    def __init__(self, rings: TccCCache):
        self._rings = rings

    def __getitem__(self, key: Key) -> Version:
        ring = self._rings[key]
        if not ring:
            raise KeyError(key)
        return ring[-1]

    def __iter__(self):
        return (k for k, ring in self._rings.items() if ring)

    def __len__(self) -> int:
        return sum(1 for ring in self._rings.values() if ring)


# ============================================================================
# I-CACHE HELPERS
# ============================================================================

def icache_insert(icache: ICache, version: Version) -> bool:
    """Add a version unless one with the same clock is already held."""
    versions = icache.setdefault(version.key, [])
    if any(v.vc == version.vc for v in versions):
        return False
    versions.append(version)
    return True


def icache_latest(icache: ICache, key: Key) -> Optional[Version]:
    return resolve_all(icache.get(key, ()))


# ============================================================================
# TRANSITIVE CLOSURE
# ============================================================================

def collect_transitive(
    icache: ICache,
    ccache: Mapping[Key, object],
    deps: Mapping[Key, VectorClock],
    *,
    implicit_same_key: bool = False,
    server: Optional[int] = None,
) -> Closure:
    """
    Per key, the clocks of the inputs and of every I-cache version reachable
    from them through dependency edges.

    ``ccache`` maps keys to anything with a ``vc`` attribute (a C-cache entry
    or a TCC ring head). With ``implicit_same_key`` every pulled key also drags
    in all I-cache versions of that key that are not newer than the demanded
    clock; the single-round propagation mode integrates that way.
    """
    closure: Closure = {}
    visited_deps: Set[Tuple[Key, VectorClock]] = set()
    visited_versions: Set[Tuple[Key, VectorClock]] = set()
    work: List[Tuple[Key, VectorClock]] = [(k, tuple(vc)) for k, vc in deps.items()]

    while work:
        key, demanded = work.pop()
        if (key, demanded) in visited_deps:
            continue
        visited_deps.add((key, demanded))
        closure.setdefault(key, set()).add(demanded)

        held = icache.get(key, ())
        if implicit_same_key:
            candidates = [v for v in held if not vc_less(demanded, v.vc)]
        else:
            candidates = [v for v in held if vc_leq(v.vc, demanded)]

        entry = ccache.get(key)
        covered = entry.vc if entry is not None else None
        for v in candidates:
            covered = v.vc if covered is None else vc_merge(covered, v.vc)
        if covered is None or not vc_leq(demanded, covered):
            # Nothing at or below the demanded clock: the oldest newer versions stand in for it.
            above = [v for v in held if vc_less(demanded, v.vc)]
            oldest = [v for v in above if not any(vc_less(o.vc, v.vc) for o in above)]
            for v in oldest:
                covered = v.vc if covered is None else vc_merge(covered, v.vc)
            candidates = [*candidates, *oldest]
        if covered is None or not vc_leq(demanded, covered):
            raise UnsatisfiableDependencyError(key, demanded, server)

        for v in candidates:
            if (key, v.vc) in visited_versions:
                continue
            visited_versions.add((key, v.vc))
            closure[key].add(v.vc)
            work.extend((k, tuple(vc)) for k, vc in v.deps.items())
    return closure


def _take(icache: ICache, key: Key, clocks: Set[VectorClock]) -> List[Version]:
    versions = icache.get(key)
    if not versions:
        return []
    taken = [v for v in versions if v.vc in clocks]
    if taken:
        remaining = [v for v in versions if v.vc not in clocks]
        if remaining:
            icache[key] = remaining
        else:
            del icache[key]
    return taken


# ============================================================================
# INTEGRATION (in place)
# ============================================================================

def integrate_in_place(
    icache: ICache,
    ccache: CCache,
    gvc: VectorClock,
    deps: Mapping[Key, VectorClock],
    rdi: Optional[ReverseDepIndex] = None,
    *,
    implicit_same_key: bool = False,
    server: Optional[int] = None,
) -> Tuple[VectorClock, List[Version]]:
    """Mutate the caches; return the new gvc and the versions moved out of the I-cache."""
    if not deps:
        return gvc, []
    closure = collect_transitive(
        icache, ccache, deps, implicit_same_key=implicit_same_key, server=server
    )
    moved: List[Version] = []
    for key in sorted(closure):
        clocks = closure[key]
        taken = _take(icache, key, clocks)
        for vc in clocks:
            gvc = vc_merge(gvc, vc)
        if not taken:
            continue
        moved.extend(taken)
        ccache[key] = resolve_all((v.as_value() for v in taken), start=ccache.get(key))
        if rdi is not None:
            for v in taken:
                rdi.record(key, v.deps)
    return gvc, moved


def integrate_tcc_in_place(
    icache: ICache,
    rings: TccCCache,
    gvc: VectorClock,
    deps: Mapping[Key, VectorClock],
    capacity: int,
    *,
    server: Optional[int] = None,
) -> Tuple[VectorClock, List[Version]]:
    """Like integrate_in_place, but each merged result is appended to the key's ring."""
    if not deps:
        return gvc, []
    heads = RingHeads(rings)
    closure = collect_transitive(icache, heads, deps, server=server)
    moved: List[Version] = []
    for key in sorted(closure):
        clocks = closure[key]
        taken = _take(icache, key, clocks)
        for vc in clocks:
            gvc = vc_merge(gvc, vc)
        if not taken:
            continue
        moved.extend(taken)
        head = heads.get(key)
        merged = resolve_all(taken, start=head)
        merged_deps: Deps = dict(head.deps) if head is not None else {}
        for v in taken:
            merged_deps = deps_merge(merged_deps, v.deps)
        merged = merged.model_copy(update={"deps": merged_deps})
        if head is not None and (head.vc, head.value) == (merged.vc, merged.value):
            continue
        ring = rings.get(key)
        if ring is None:
            ring = rings[key] = deque(maxlen=capacity)
        ring.append(merged)
    return gvc, moved


# ============================================================================
# PURE WRAPPERS
# ============================================================================

def integrate(
    icache: ICache,
    ccache: CCache,
    gvc: VectorClock,
    deps: Mapping[Key, VectorClock],
    rdi: Optional[ReverseDepIndex] = None,
    *,
    implicit_same_key: bool = False,
) -> Tuple[ICache, CCache, VectorClock]:
    """Functional form: inputs are left untouched."""
    icache2 = {k: list(vs) for k, vs in icache.items()}
    ccache2 = dict(ccache)
    gvc2, _ = integrate_in_place(
        icache2, ccache2, tuple(gvc), deps, rdi, implicit_same_key=implicit_same_key
    )
    return icache2, ccache2, gvc2


def integrate_tcc(
    icache: ICache,
    rings: TccCCache,
    gvc: VectorClock,
    deps: Mapping[Key, VectorClock],
    capacity: int = 1,
) -> Tuple[ICache, TccCCache, VectorClock]:
    icache2 = {k: list(vs) for k, vs in icache.items()}
    rings2 = {k: deque(ring, maxlen=capacity) for k, ring in rings.items()}
    gvc2, _ = integrate_tcc_in_place(icache2, rings2, tuple(gvc), deps, capacity)
    return icache2, rings2, gvc2


def evict(ccache: CCache, rdi: ReverseDepIndex, key: Key) -> CCache:
    """Drop key and every key that (transitively) depends on it."""
    if key not in ccache:
        return dict(ccache)
    doomed = rdi.reachable(key)
    logger.debug("evicting %s (with %d dependents)", key, len(doomed) - 1)
    return {k: v for k, v in ccache.items() if k not in doomed}


# ============================================================================
# DUAL CACHE
# ============================================================================

@dataclass
class DualCache:
    """The caches owned by one server."""

    ccache: CCache = field(default_factory=dict)
    icache: ICache = field(default_factory=dict)
    rdi: ReverseDepIndex = field(default_factory=ReverseDepIndex)

    def integrate(
        self,
        gvc: VectorClock,
        deps: Mapping[Key, VectorClock],
        *,
        implicit_same_key: bool = False,
        server: Optional[int] = None,
    ) -> Tuple[VectorClock, List[Version]]:
        return integrate_in_place(
            self.icache,
            self.ccache,
            gvc,
            deps,
            self.rdi,
            implicit_same_key=implicit_same_key,
            server=server,
        )

    def insert(self, version: Version) -> bool:
        return icache_insert(self.icache, version)

    def evict(self, key: Key) -> List[Key]:
        before = set(self.ccache)
        self.ccache = evict(self.ccache, self.rdi, key)
        dropped = sorted(before - set(self.ccache))
        for k in dropped:
            self.rdi.recorded.pop(k, None)
        return dropped

    def recorded_deps(self) -> Dict[Key, Deps]:
        return {k: self.rdi.recorded.get(k, {}) for k in self.ccache}

    def clone(self) -> "DualCache":
        return copy.deepcopy(self)

