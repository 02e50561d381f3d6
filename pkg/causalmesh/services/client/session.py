"""Workflow session context carried across function migrations."""

from typing import Dict, Iterable, List, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError

from causalmesh.errors import SessionDecodeError
from causalmesh.schemas.request import BatchItem
from causalmesh.services.core.versions import Deps, Key, Version, canonical_json, deps_merge, resolve


class ClientSession(BaseModel):
    workflow: str = Field(default="", description="Workflow id")
    session_id: str = Field(default="", description="Execution context id used in traces")
    deps: Deps = Field(default_factory=dict, description="Observed versions, own writes excluded")
    local: Dict[Key, Version] = Field(default_factory=dict, description="Own writes, latest per key")

    def fork(self, session_id: str) -> "ClientSession":
        """Independent copy for one branch of a fan-out."""
        return self.model_copy(deep=True, update={"session_id": session_id})


class TccSession(ClientSession):
    write_buffer: List[BatchItem] = Field(default_factory=list)
    readset: Dict[Key, Version] = Field(default_factory=dict)

    def buffered(self, key: Key):
        """Latest buffered value for key, or None."""
        for item in reversed(self.write_buffer):
            if item.key == key:
                return item.value
        return None


S = TypeVar("S", bound=ClientSession)


def merge_locals(a: Dict[Key, Version], b: Dict[Key, Version]) -> Dict[Key, Version]:
    out = dict(a)
    for key, v in b.items():
        out[key] = v if key not in out else resolve(out[key], v)
    return out


def join_sessions(sessions: Iterable[S], session_id: str) -> S:
    """
    Combine the sessions of the branches feeding a join node.

    deps merge key-wise; local entries merge with resolve. TCC buffers are
    concatenated in branch order and read sets keep the first branch's entry
    for a key (the sink validates the branches before joining).
    """
    branches = list(sessions)
    if not branches:
        raise ValueError("join of zero sessions")
    first = branches[0]
    deps: Deps = {}
    local: Dict[Key, Version] = {}
    for s in branches:
        deps = deps_merge(deps, s.deps)
        local = merge_locals(local, s.local)
    update = {"session_id": session_id, "deps": deps, "local": local}
    if isinstance(first, TccSession):
        buffer: List[BatchItem] = []
        readset: Dict[Key, Version] = {}
        for s in branches:
            buffer.extend(s.write_buffer)
            for key, v in s.readset.items():
                readset.setdefault(key, v)
        update.update(write_buffer=buffer, readset=readset)
    return first.model_copy(deep=True, update=update)


def migrate(sess: ClientSession) -> str:
    """Canonical JSON blob shipped to the next function's host."""
    return canonical_json(sess)


def restore(blob: str, cls: Type[S] = ClientSession) -> S:
    try:
        return cls.model_validate_json(blob)
    except ValidationError as e:
        raise SessionDecodeError(f"bad session blob: {e.error_count()} invalid field(s)") from e
