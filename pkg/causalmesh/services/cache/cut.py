"""
Strict causal cut checks.

A set of versions is a strict causal cut when every dependency of every
member is present in the set, either with the same clock or superseded by a
newer version of the same key.
"""

from typing import Callable, Dict, Iterable, List, Mapping, Optional

from causalmesh.services.core.clocks import VectorClock, vc_leq, vc_merge
from causalmesh.services.core.versions import Deps, Key, Version, VersionedValue


def is_strict_causal_cut(versions: Iterable[Version]) -> bool:
    """Brute-force check over a small set of versions."""
    members: List[Version] = list(versions)
    by_key: dict = {}
    for v in members:
        by_key.setdefault(v.key, []).append(v.vc)
    for x in members:
        for key, dep_vc in x.deps.items():
            if not any(vc_leq(dep_vc, have) for have in by_key.get(key, ())):
                return False
    return True


# Returns the oldest known version of key whose clock covers the given one.
VersionLookup = Callable[[Key, VectorClock], Optional[Version]]


def forms_cut(versions: Iterable[Version], lookup: Optional[VersionLookup] = None) -> bool:
    """
    Cut check for partial views such as a transaction's read set.

    Dependencies on keys the set does not hold at all are outstanding
    obligations, not violations: they stand in the set as placeholders at the
    demanded clock. With ``lookup`` a placeholder is replaced by the oldest
    known version covering it, whose own deps are then demanded in turn, so
    transitive dependencies are checked against the set as well.
    """
    members = list(versions)
    present = {v.key for v in members}
    required: Deps = {}
    filled: Dict[Key, Version] = {}
    frontier = members
    while frontier:
        for v in frontier:
            for key, dep_vc in v.deps.items():
                if key not in present:
                    required[key] = dep_vc if key not in required else vc_merge(required[key], dep_vc)
        frontier = []
        if lookup is None:
            break
        for key in sorted(required):
            need = required[key]
            have = filled.get(key)
            if have is not None and vc_leq(need, have.vc):
                continue
            found = lookup(key, need)
            if found is None:
                filled.pop(key, None)
                continue
            filled[key] = found
            frontier.append(found)
    placeholders = [
        Version(key=k, value=b"", vc=vc) for k, vc in required.items() if k not in filled
    ]
    return is_strict_causal_cut([*members, *filled.values(), *placeholders])


def snapshot_forms_cut(snapshot: Mapping[Key, Version], lookup: Optional[VersionLookup] = None) -> bool:
    """One-version-per-key form used by TCC reads."""
    return forms_cut(snapshot.values(), lookup)


def ccache_as_versions(
    ccache: Mapping[Key, VersionedValue], recorded: Mapping[Key, Deps]
) -> List[Version]:
    """Pair C-cache entries with the dependencies recorded when they were integrated."""
    return [
        Version(key=k, value=entry.value, vc=entry.vc, deps=dict(recorded.get(k, {})))
        for k, entry in ccache.items()
    ]
