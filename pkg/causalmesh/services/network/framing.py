"""
Wire frames: a 4-byte big-endian length followed by a canonical JSON body.

One message per frame. A frame that is too large or whose body does not parse
raises FrameDecodeError; the connection carrying it is dropped.
"""

import asyncio
import json
import socket
import struct
from typing import Any, Optional

from pydantic import BaseModel, TypeAdapter, ValidationError

from causalmesh.errors import FrameDecodeError
from causalmesh.schemas.request import Request
from causalmesh.schemas.response import Reply
from causalmesh.services.core.versions import canonical_json

HEADER = struct.Struct(">I")
HEADER_SIZE = HEADER.size
MAX_FRAME = 16 * 1024 * 1024

REQUEST_ADAPTER: TypeAdapter = TypeAdapter(Request)
REPLY_ADAPTER: TypeAdapter = TypeAdapter(Reply)


def encode_frame(message: BaseModel) -> bytes:
    body = canonical_json(message).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise FrameDecodeError(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def frame_length(header: bytes) -> int:
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameDecodeError(f"frame too large: {length} bytes")
    return length


def decode_body(body: bytes, adapter: TypeAdapter) -> Any:
    try:
        return adapter.validate_python(json.loads(body.decode("utf-8")))
    except (UnicodeDecodeError, ValueError, ValidationError) as e:
        raise FrameDecodeError(f"bad frame body: {e}") from e


def decode_request(body: bytes) -> Any:
    return decode_body(body, REQUEST_ADAPTER)


def decode_reply(body: bytes) -> Any:
    return decode_body(body, REPLY_ADAPTER)


# ============================================================================
# ASYNCIO STREAMS
# ============================================================================

async def read_frame(reader: asyncio.StreamReader) -> Optional[bytes]:
    """Next frame body, or None on a clean end of stream."""
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        raise FrameDecodeError("truncated frame header") from e
    length = frame_length(header)
    try:
        return await reader.readexactly(length)
    except asyncio.IncompleteReadError as e:
        raise FrameDecodeError(f"truncated frame: {len(e.partial)} of {length} bytes") from e


async def write_frame(writer: asyncio.StreamWriter, message: BaseModel) -> None:
    writer.write(encode_frame(message))
    await writer.drain()


# ============================================================================
# BLOCKING SOCKETS (client side)
# ============================================================================

def recv_exact(sock: socket.socket, n: int) -> bytes:
    data = bytearray()
    while len(data) < n:
        chunk = sock.recv(n - len(data))
        if not chunk:
            raise ConnectionError("socket closed")
        data.extend(chunk)
    return bytes(data)


def send_frame(sock: socket.socket, message: BaseModel) -> None:
    sock.sendall(encode_frame(message))


def recv_frame(sock: socket.socket) -> bytes:
    return recv_exact(sock, frame_length(recv_exact(sock, HEADER_SIZE)))
