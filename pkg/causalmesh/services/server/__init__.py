from causalmesh.services.server.state_machine import (
    ActionResult,
    CausalMeshServer,
    ServerState,
    chain_of,
    tail_hop,
)

__all__ = ["ActionResult", "CausalMeshServer", "ServerState", "chain_of", "tail_hop"]
