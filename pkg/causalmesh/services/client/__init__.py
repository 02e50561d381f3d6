from causalmesh.services.client.library import (
    ServerHandle,
    client_read,
    client_read_txn,
    client_write,
    tcc_commit,
    tcc_read,
    tcc_write,
)
from causalmesh.services.client.session import (
    ClientSession,
    TccSession,
    join_sessions,
    merge_locals,
    migrate,
    restore,
)

__all__ = [
    "ClientSession",
    "ServerHandle",
    "TccSession",
    "client_read",
    "client_read_txn",
    "client_write",
    "join_sessions",
    "merge_locals",
    "migrate",
    "restore",
    "tcc_commit",
    "tcc_read",
    "tcc_write",
]
