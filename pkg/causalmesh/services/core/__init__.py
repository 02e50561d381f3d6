from causalmesh.services.core.clocks import (
    Ordering,
    VectorClock,
    make_clock,
    vc_compare,
    vc_increment,
    vc_leq,
    vc_less,
    vc_merge,
    vc_merge_all,
    zero_clock,
)
from causalmesh.services.core.versions import (
    Deps,
    Key,
    Version,
    VersionedValue,
    WireBytes,
    canonical_json,
    deps_add,
    deps_covered_by,
    deps_merge,
    resolve,
    resolve_all,
)

__all__ = [
    "Deps",
    "Key",
    "Ordering",
    "VectorClock",
    "Version",
    "VersionedValue",
    "WireBytes",
    "canonical_json",
    "deps_add",
    "deps_covered_by",
    "deps_merge",
    "make_clock",
    "resolve",
    "resolve_all",
    "vc_compare",
    "vc_increment",
    "vc_leq",
    "vc_less",
    "vc_merge",
    "vc_merge_all",
    "zero_clock",
]
