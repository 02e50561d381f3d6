"""
Versions, nearest-dependency maps and the conflict resolution policy.

Resolution rule: a newer version overwrites an older one; for concurrent
versions the clocks are merged and the value of the write whose own clock is
lexicographically larger is kept. Each resolved value remembers the clock it
was originally written with (``origin_vc``) so that folding any number of
versions in any order yields the same result.
"""

import json
from typing import Annotated, Any, Dict, Iterable, Mapping, Optional, TypeVar, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator

from causalmesh.errors import KeyMismatchError
from causalmesh.services.core.clocks import VectorClock, vc_leq, vc_merge

Key = str
Deps = Dict[Key, VectorClock]


def _decode_bytes(value: Any) -> Any:
    if isinstance(value, str):
        return bytes.fromhex(value)
    if isinstance(value, (bytearray, memoryview)):
        return bytes(value)
    return value


# Opaque byte values travel as hex strings in JSON.
WireBytes = Annotated[
    bytes,
    BeforeValidator(_decode_bytes),
    PlainSerializer(lambda b: b.hex(), return_type=str, when_used="json"),
]


# ============================================================================
# DEPENDENCY MAPS
# ============================================================================

def deps_add(d: Mapping[Key, VectorClock], key: Key, vc: VectorClock) -> Deps:
    """Return a copy of d with (key, vc) folded in by element-wise maximum."""
    out = dict(d)
    existing = out.get(key)
    out[key] = tuple(vc) if existing is None else vc_merge(existing, tuple(vc))
    return out


def deps_merge(d1: Mapping[Key, VectorClock], d2: Mapping[Key, VectorClock]) -> Deps:
    out = dict(d1)
    for key, vc in d2.items():
        existing = out.get(key)
        out[key] = tuple(vc) if existing is None else vc_merge(existing, tuple(vc))
    return out


def deps_covered_by(d: Mapping[Key, VectorClock], frontier: Mapping[Key, VectorClock]) -> bool:
    """True when every dependency in d is dominated by frontier's clock for its key."""
    for key, vc in d.items():
        have = frontier.get(key)
        if have is None or not vc_leq(vc, have):
            return False
    return True


# ============================================================================
# VERSION MODELS
# ============================================================================

def _fill_origin(data: Any) -> Any:
    if isinstance(data, dict) and data.get("origin_vc") is None and "vc" in data:
        data = dict(data)
        data["origin_vc"] = data["vc"]
    return data


class VersionedValue(BaseModel):
    """A value and its version, as held in a C-cache or returned to clients."""

    model_config = ConfigDict(frozen=True)

    value: WireBytes = Field(description="Opaque value bytes")
    vc: VectorClock = Field(description="Version clock (merged for resolved values)")
    origin_vc: Optional[VectorClock] = Field(
        default=None, description="Clock the kept value was written with"
    )

    @model_validator(mode="before")
    @classmethod
    def _default_origin(cls, data: Any) -> Any:
        return _fill_origin(data)


class Version(BaseModel):
    """A write: key, value, clock and nearest dependencies."""

    model_config = ConfigDict(frozen=True)

    key: Key
    value: WireBytes
    vc: VectorClock
    deps: Deps = Field(default_factory=dict)
    origin_vc: Optional[VectorClock] = None

    @model_validator(mode="before")
    @classmethod
    def _default_origin(cls, data: Any) -> Any:
        return _fill_origin(data)

    def __hash__(self) -> int:
        return hash((self.key, self.vc, self.origin_vc, self.value))

    def as_value(self) -> VersionedValue:
        return VersionedValue(value=self.value, vc=self.vc, origin_vc=self.origin_vc)

    def short(self) -> str:
        return f"{self.key}@{list(self.vc)}"


V = TypeVar("V", VersionedValue, Version)


def _winner_key(v: Union[VersionedValue, Version]):
    return (v.origin_vc, v.value)


def resolve(a: V, b: V) -> V:
    """Deterministic conflict resolution between two versions of one key."""
    key_a = getattr(a, "key", None)
    key_b = getattr(b, "key", None)
    if key_a is not None and key_b is not None and key_a != key_b:
        raise KeyMismatchError(f"cannot resolve versions of {key_a!r} and {key_b!r}")
    if a == b:
        return a
    merged = vc_merge(a.vc, b.vc)
    winner = a if _winner_key(a) >= _winner_key(b) else b
    if winner.vc == merged:
        return winner
    return winner.model_copy(update={"vc": merged})


def resolve_all(versions: Iterable[V], start: Optional[V] = None) -> Optional[V]:
    acc = start
    for v in versions:
        acc = v if acc is None else resolve(acc, v)
    return acc


# ============================================================================
# CANONICAL JSON
# ============================================================================

def canonical_json(obj: Any) -> str:
    """Sorted-key, compact JSON of a model, a list of models or plain data."""
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, bytes):
        return obj.hex()
    return obj
