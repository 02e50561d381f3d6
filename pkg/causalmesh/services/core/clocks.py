"""
Vector clock algebra.

A clock is a plain tuple of non-negative integers whose length is the cluster
size N; entry i is owned by server i. Tuples are immutable and hashable, and
Python compares them lexicographically, which is the total order used to
break ties between concurrent versions.
"""

from enum import Enum
from typing import Iterable, Sequence, Tuple

from causalmesh.errors import ConfigurationError

VectorClock = Tuple[int, ...]


class Ordering(str, Enum):
    LESS = "less"
    EQUAL = "equal"
    GREATER = "greater"
    CONCURRENT = "concurrent"


def zero_clock(n: int) -> VectorClock:
    if n < 1:
        raise ConfigurationError(f"cluster size must be >= 1, got {n}")
    return (0,) * n


def make_clock(entries: Iterable[int]) -> VectorClock:
    """Build a clock from any integer sequence, rejecting negative entries."""
    vc = tuple(int(e) for e in entries)
    if any(e < 0 for e in vc):
        raise ConfigurationError(f"vector clock entries must be >= 0: {list(vc)}")
    return vc


def _check_width(a: Sequence[int], b: Sequence[int]) -> None:
    if len(a) != len(b):
        raise ConfigurationError(f"vector clock width mismatch: {len(a)} != {len(b)}")


def vc_merge(a: VectorClock, b: VectorClock) -> VectorClock:
    """Element-wise maximum."""
    _check_width(a, b)
    return tuple(x if x >= y else y for x, y in zip(a, b))


def vc_merge_all(clocks: Iterable[VectorClock], start: VectorClock) -> VectorClock:
    merged = start
    for vc in clocks:
        merged = vc_merge(merged, vc)
    return merged


def vc_leq(a: VectorClock, b: VectorClock) -> bool:
    """a <= b component-wise."""
    _check_width(a, b)
    return all(x <= y for x, y in zip(a, b))


def vc_less(a: VectorClock, b: VectorClock) -> bool:
    """a happens strictly before b."""
    return a != b and vc_leq(a, b)


def vc_compare(a: VectorClock, b: VectorClock) -> Ordering:
    _check_width(a, b)
    le = ge = True
    for x, y in zip(a, b):
        if x > y:
            le = False
        elif x < y:
            ge = False
        if not le and not ge:
            return Ordering.CONCURRENT
    if le and ge:
        return Ordering.EQUAL
    return Ordering.LESS if le else Ordering.GREATER


def vc_increment(vc: VectorClock, server_index: int) -> VectorClock:
    if not 0 <= server_index < len(vc):
        raise ConfigurationError(
            f"server index {server_index} out of range for clock width {len(vc)}"
        )
    return vc[:server_index] + (vc[server_index] + 1,) + vc[server_index + 1:]
