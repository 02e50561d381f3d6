# causalmesh/schemas/response.py
"""Replies to client requests."""

from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, Field

from causalmesh.services.core.clocks import VectorClock
from causalmesh.services.core.versions import Key, Version, VersionedValue


class ReadReply(BaseModel):
    kind: Literal["read_reply"] = "read_reply"
    key: Key
    value: Optional[VersionedValue] = None
    miss: bool = Field(default=False, description="Key absent from the C-cache; call miss_fetch")


class WriteReply(BaseModel):
    kind: Literal["write_reply"] = "write_reply"
    key: Key
    vc: VectorClock


class TxnItem(BaseModel):
    key: Key
    value: Optional[VersionedValue] = None
    fetched: bool = Field(default=False, description="Served by the miss path, not the C-cache")


class ReadTxnReply(BaseModel):
    kind: Literal["read_txn_reply"] = "read_txn_reply"
    items: List[TxnItem] = Field(default_factory=list)


class MissFetchReply(BaseModel):
    kind: Literal["miss_fetch_reply"] = "miss_fetch_reply"
    key: Key
    value: Optional[VersionedValue] = None
    found: bool = True
    store_read: bool = Field(default=False, description="The store was consulted")


class TccReadReply(BaseModel):
    kind: Literal["tcc_read_reply"] = "tcc_read_reply"
    key: Key
    version: Optional[Version] = None
    miss: bool = False
    aborted: bool = False


class BatchWriteReply(BaseModel):
    kind: Literal["batch_write_reply"] = "batch_write_reply"
    clocks: List[VectorClock] = Field(default_factory=list)


class ErrorReply(BaseModel):
    kind: Literal["error"] = "error"
    error: str
    detail: str = ""


Reply = Annotated[
    Union[
        ReadReply,
        WriteReply,
        ReadTxnReply,
        MissFetchReply,
        TccReadReply,
        BatchWriteReply,
        ErrorReply,
    ],
    Field(discriminator="kind"),
]
