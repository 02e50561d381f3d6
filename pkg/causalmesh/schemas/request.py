# causalmesh/schemas/request.py
"""Requests and server-to-server messages carried in wire frames."""

from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field

from causalmesh.services.core.clocks import VectorClock
from causalmesh.services.core.versions import Deps, Key, Version, WireBytes


class ClientReadRequest(BaseModel):
    kind: Literal["client_read"] = "client_read"
    key: Key
    deps: Deps = Field(default_factory=dict)
    session: Optional[str] = Field(default=None, description="Session id, for trace attribution")


class ClientWriteRequest(BaseModel):
    kind: Literal["client_write"] = "client_write"
    key: Key
    value: WireBytes
    deps: Deps = Field(default_factory=dict)
    local: Dict[Key, Version] = Field(default_factory=dict, description="The session's own writes")
    session: Optional[str] = None


class ClientReadTxnRequest(BaseModel):
    kind: Literal["client_read_txn"] = "client_read_txn"
    keys: List[Key]
    deps: Deps = Field(default_factory=dict)
    session: Optional[str] = None


class MissFetchRequest(BaseModel):
    kind: Literal["miss_fetch"] = "miss_fetch"
    key: Key
    session: Optional[str] = None


class TccReadRequest(BaseModel):
    kind: Literal["tcc_read"] = "tcc_read"
    key: Key
    deps: Deps = Field(default_factory=dict)
    readset: Dict[Key, Version] = Field(default_factory=dict, description="Versions read so far")
    session: Optional[str] = None


class BatchItem(BaseModel):
    key: Key
    value: WireBytes


class BatchWriteRequest(BaseModel):
    kind: Literal["batch_write"] = "batch_write"
    batch: List[BatchItem]
    deps: Deps = Field(default_factory=dict)
    local: Dict[Key, Version] = Field(default_factory=dict)
    session: Optional[str] = None


# Server-to-server

class PropagateMsg(BaseModel):
    kind: Literal["server_write"] = "server_write"
    origin: int = Field(description="Server that assigned the clock")
    hop: int = Field(description="0 at the origin's successor")
    version: Version


class IntegrateHint(BaseModel):
    kind: Literal["integrate_hint"] = "integrate_hint"
    origin: int
    key: Key
    vc: VectorClock


class ReplicateMsg(BaseModel):
    """Direct replication used by the eventual baseline."""

    kind: Literal["replicate"] = "replicate"
    origin: int
    version: Version


class PeerHello(BaseModel):
    kind: Literal["hello"] = "hello"
    server: int


ClientRequest = Union[
    ClientReadRequest,
    ClientWriteRequest,
    ClientReadTxnRequest,
    MissFetchRequest,
    TccReadRequest,
    BatchWriteRequest,
]

PeerMessage = Union[PropagateMsg, IntegrateHint, ReplicateMsg, PeerHello]

Request = Annotated[Union[ClientRequest, PeerMessage], Field(discriminator="kind")]
