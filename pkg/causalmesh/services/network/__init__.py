from causalmesh.services.network.framing import (
    MAX_FRAME,
    decode_reply,
    decode_request,
    encode_frame,
    read_frame,
    recv_frame,
    send_frame,
    write_frame,
)
from causalmesh.services.network.runner import (
    ServerProcess,
    TcpCluster,
    TcpHandle,
    TcpScriptRunner,
    run_client,
    serve,
)

__all__ = [
    "MAX_FRAME",
    "ServerProcess",
    "TcpCluster",
    "TcpHandle",
    "TcpScriptRunner",
    "decode_reply",
    "decode_request",
    "encode_frame",
    "read_frame",
    "recv_frame",
    "run_client",
    "send_frame",
    "serve",
    "write_frame",
]
