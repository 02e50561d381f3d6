from causalmesh.services.store.versioned_store import (
    VersionedStore,
    store_get,
    store_put,
    store_snapshot,
)

__all__ = ["VersionedStore", "store_get", "store_put", "store_snapshot"]
