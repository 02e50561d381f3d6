from causalmesh.services.cache.cut import (
    ccache_as_versions,
    forms_cut,
    is_strict_causal_cut,
    snapshot_forms_cut,
)
from causalmesh.services.cache.dual_cache import (
    CCache,
    DualCache,
    ICache,
    ReverseDepIndex,
    TccCCache,
    collect_transitive,
    evict,
    icache_insert,
    icache_latest,
    integrate,
    integrate_in_place,
    integrate_tcc,
    integrate_tcc_in_place,
)

__all__ = [
    "CCache",
    "DualCache",
    "ICache",
    "ReverseDepIndex",
    "TccCCache",
    "ccache_as_versions",
    "collect_transitive",
    "evict",
    "forms_cut",
    "icache_insert",
    "icache_latest",
    "integrate",
    "integrate_in_place",
    "integrate_tcc",
    "integrate_tcc_in_place",
    "is_strict_causal_cut",
    "snapshot_forms_cut",
]
